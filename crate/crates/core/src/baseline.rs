//! Nonprivate reference optimum `min_{||w|| <= 1} L(w; D)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::losses::{eval_empirical_risk, GenLinLoss};
use crate::math::{dot, norm, sqrt};
use crate::solver::project_ball_in_place;
use crate::{Error, Result};

/// Width of the improvement window used as the stopping rule.
pub const WINDOW: usize = 200;
pub const DEFAULT_MAX_ITERATIONS: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub w: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// False when the iteration ceiling was hit before the window rule fired.
    pub converged: bool,
}

fn subgradient(loss: &GenLinLoss, w: &[f64], data: &Dataset, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let inv_n = 1.0 / data.len() as f64;
    for (x, y) in data.records() {
        let d = loss.derivative(y * dot(x, w));
        if d != 0.0 {
            let c = d * y * inv_n;
            for (o, xi) in out.iter_mut().zip(x) {
                *o += c * xi;
            }
        }
    }
}

pub fn baseline_optimum(loss: &GenLinLoss, data: &Dataset, tol: f64) -> Result<Baseline> {
    baseline_optimum_with(loss, data, tol, 1.0, DEFAULT_MAX_ITERATIONS)
}

/// Projected subgradient descent with normalized steps `radius / sqrt(t)`,
/// tracking the best of the iterates and of their running average. Stops
/// once the best value improved by less than `tol` over the last
/// [`WINDOW`] steps.
pub fn baseline_optimum_with(
    loss: &GenLinLoss,
    data: &Dataset,
    tol: f64,
    radius: f64,
    max_iterations: usize,
) -> Result<Baseline> {
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    let p = data.dim();
    let mut w = vec![0.0; p];
    let mut avg = vec![0.0; p];
    let mut g = vec![0.0; p];
    let mut best_w = w.clone();
    let mut best = eval_empirical_risk(loss, &w, data)?;
    let mut window_start_best = best;
    let mut weight_sum = 0.0;

    for t in 1..=max_iterations {
        subgradient(loss, &w, data, &mut g);
        let gn = norm(&g);
        if gn == 0.0 {
            // zero subgradient: w is a minimizer
            let v = eval_empirical_risk(loss, &w, data)?;
            if v <= best {
                best = v;
                best_w.copy_from_slice(&w);
            }
            return Ok(Baseline {
                w: best_w,
                value: best,
                iterations: t,
                converged: true,
            });
        }
        let eta = radius / sqrt(t as f64);
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= eta * gi / gn;
        }
        project_ball_in_place(&mut w, radius);

        // step-weighted average
        weight_sum += eta;
        let a = eta / weight_sum;
        for (ai, wi) in avg.iter_mut().zip(&w) {
            *ai += a * (wi - *ai);
        }

        for cand in [&w, &avg] {
            let v = eval_empirical_risk(loss, cand, data)?;
            if v < best {
                best = v;
                best_w.copy_from_slice(cand);
            }
        }
        if t % WINDOW == 0 {
            if window_start_best - best < tol {
                return Ok(Baseline {
                    w: best_w,
                    value: best,
                    iterations: t,
                    converged: true,
                });
            }
            window_start_best = best;
        }
    }
    Ok(Baseline {
        w: best_w,
        value: best,
        iterations: max_iterations,
        converged: false,
    })
}
