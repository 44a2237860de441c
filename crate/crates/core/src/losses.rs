//! Generalized linear losses `l(w; x, y) = f(y <x, w>)` and the kink
//! distribution `Q` that writes a convex 1-Lipschitz `f` as a mixture of
//! absolute values plus an affine part.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};

use crate::approx::{smoothed_hinge, smoothed_hinge_derivative};
use crate::data::Dataset;
use crate::math::{dot, exp, ln_1p, sqrt};
use crate::{Error, Result, StreamRng};

/// Bisection tolerance for inverting the subgradient.
pub const Q_TOLERANCE: f64 = 1e-9;

/// A 1-Lipschitz convex scalar function on `[-1, 1]` with its derivative.
///
/// At kinks `derivative` returns the left derivative.
#[derive(Debug, Clone, Copy)]
pub enum GenLinLoss {
    /// `max(0, 1/2 - t)`; the margin is fixed at one half.
    Hinge,
    /// `max(0, t)`
    Plus,
    /// `|t|`
    Abs,
    /// `ln(1 + e^-t)`
    Logistic,
    /// The smooth surrogate of the hinge with scale `beta`.
    SmoothedHinge { beta: f64 },
    /// Caller supplied `(f, f')` pair. Convexity is the caller's promise;
    /// `sample_q` reports it if it turns out to be false.
    Custom {
        name: &'static str,
        value: fn(f64) -> f64,
        derivative: fn(f64) -> f64,
    },
}

impl GenLinLoss {
    /// Names accepted on the command line.
    pub const CATALOG: [&'static str; 4] = ["hinge", "plus", "abs", "logistic"];

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "hinge" => Ok(GenLinLoss::Hinge),
            "plus" => Ok(GenLinLoss::Plus),
            "abs" => Ok(GenLinLoss::Abs),
            "logistic" => Ok(GenLinLoss::Logistic),
            other => Err(Error::domain(alloc::format!(
                "unknown loss `{other}` (expected one of hinge, plus, abs, logistic)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GenLinLoss::Hinge => "hinge",
            GenLinLoss::Plus => "plus",
            GenLinLoss::Abs => "abs",
            GenLinLoss::Logistic => "logistic",
            GenLinLoss::SmoothedHinge { .. } => "smoothed_hinge",
            GenLinLoss::Custom { name, .. } => name,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            GenLinLoss::Hinge => (0.5 - t).max(0.0),
            GenLinLoss::Plus => t.max(0.0),
            GenLinLoss::Abs => t.abs(),
            GenLinLoss::Logistic => {
                // ln(1 + e^-t) without overflow for very negative t
                if t >= 0.0 {
                    ln_1p(exp(-t))
                } else {
                    -t + ln_1p(exp(t))
                }
            }
            GenLinLoss::SmoothedHinge { beta } => smoothed_hinge(t, beta),
            GenLinLoss::Custom { value, .. } => value(t),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            GenLinLoss::Hinge => {
                if t <= 0.5 {
                    -1.0
                } else {
                    0.0
                }
            }
            GenLinLoss::Plus => {
                if t <= 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
            GenLinLoss::Abs => {
                if t <= 0.0 {
                    -1.0
                } else {
                    1.0
                }
            }
            GenLinLoss::Logistic => -1.0 / (1.0 + exp(t)),
            GenLinLoss::SmoothedHinge { beta } => smoothed_hinge_derivative(t, beta),
            GenLinLoss::Custom { derivative, .. } => derivative(t),
        }
    }

    /// `f'(-1)`
    pub fn d_left(&self) -> f64 {
        self.derivative(-1.0)
    }

    /// `f'(1)`
    pub fn d_right(&self) -> f64 {
        match self {
            // right derivative at the boundary
            GenLinLoss::Hinge => 0.0,
            GenLinLoss::Plus | GenLinLoss::Abs => 1.0,
            _ => self.derivative(1.0),
        }
    }

    /// `f'(1) - f'(-1)`; zero for affine losses.
    pub fn spread(&self) -> f64 {
        self.d_right() - self.d_left()
    }

    pub fn is_affine(&self) -> bool {
        self.spread() <= 0.0
    }
}

/// A draw from the kink distribution `Q`, always in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct QSample(f64);

impl QSample {
    pub fn new(s: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&s) {
            return Err(Error::domain("Q samples live in [-1, 1]"));
        }
        Ok(Self(s))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// `(1/n) sum_i f(y_i <x_i, w>)`.
pub fn eval_empirical_risk(loss: &GenLinLoss, w: &[f64], data: &Dataset) -> Result<f64> {
    if w.len() != data.dim() {
        return Err(Error::Dimension {
            expected: data.dim(),
            got: w.len(),
        });
    }
    let total: f64 = data
        .records()
        .map(|(x, y)| loss.value(y * dot(x, w)))
        .sum();
    Ok(total / data.len() as f64)
}

/// Maps a uniform variate `u_draw` in `[0, 1)` to the largest `s` in
/// `[-1, 1]` whose subdifferential contains
/// `u = f'(-1) + u_draw (f'(1) - f'(-1))`.
///
/// Bisection keeps `f'(lo) <= u < f'(hi)`, which converges to the right end
/// of the (possibly flat) preimage of `u`, i.e. the maximal one.
pub fn sample_q(loss: &GenLinLoss, u_draw: f64) -> Result<QSample> {
    if !(0.0..1.0).contains(&u_draw) {
        return Err(Error::domain("u_draw must lie in [0, 1)"));
    }
    let (d_left, d_right) = (loss.d_left(), loss.d_right());
    if d_left >= d_right {
        return Err(Error::domain(alloc::format!(
            "loss `{}` is affine on [-1, 1]; Q is undefined",
            loss.name()
        )));
    }
    let u = d_left + u_draw * (d_right - d_left);

    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let (mut f_lo, mut f_hi) = (loss.derivative(lo), d_right);
    if f_lo > u {
        // only possible through rounding at u_draw = 0
        return QSample::new(-1.0);
    }
    while hi - lo > Q_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        let f_mid = loss.derivative(mid);
        if f_mid < f_lo - Q_TOLERANCE || f_mid > f_hi + Q_TOLERANCE {
            return Err(Error::InvariantViolation(alloc::format!(
                "derivative of `{}` is not monotone near {mid}",
                loss.name()
            )));
        }
        if f_mid <= u {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    QSample::new(lo.clamp(-1.0, 1.0))
}

/// Outcome of a Monte-Carlo check of the absolute-value decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    /// Least-squares fit of the free constant.
    pub constant: f64,
    /// `max_theta |F_hat(theta) + c - f(theta)|`
    pub max_deviation: f64,
    /// Largest Monte-Carlo standard error over the grid.
    pub standard_error: f64,
    /// Deviation attributable to the bisection tolerance alone.
    pub numerical_floor: f64,
    pub num_samples: usize,
}

impl DecompositionReport {
    /// Whether the deviation is within `k` standard errors (plus the
    /// bisection floor).
    pub fn within(&self, k: f64) -> bool {
        self.max_deviation <= k * self.standard_error + self.numerical_floor
    }
}

/// Monte-Carlo check of
/// `f(theta) = (f'(1) - f'(-1))/2 E|theta - s| + (f'(1) + f'(-1))/2 theta + c`.
pub fn verify_decomposition(
    loss: &GenLinLoss,
    theta_grid: &[f64],
    num_samples: usize,
    seed: u64,
) -> Result<DecompositionReport> {
    if num_samples < 10_000 {
        return Err(Error::domain("verify_decomposition needs at least 1e4 samples"));
    }
    let mut rng = StreamRng::seed_from_u64(seed);
    let samples = if loss.is_affine() {
        Vec::new()
    } else {
        (0..num_samples)
            .map(|_| sample_q(loss, rng.random::<f64>()).map(|q| q.value()))
            .collect::<Result<Vec<_>>>()?
    };
    decomposition_from_samples(loss, theta_grid, &samples)
}

/// Same check as [`verify_decomposition`] against caller supplied Q draws
/// (for instance an exact point mass).
pub fn decomposition_from_samples(
    loss: &GenLinLoss,
    theta_grid: &[f64],
    samples: &[f64],
) -> Result<DecompositionReport> {
    if theta_grid.is_empty() {
        return Err(Error::domain("theta grid is empty"));
    }
    let half_spread = 0.5 * loss.spread().max(0.0);
    let mid = 0.5 * (loss.d_right() + loss.d_left());
    let m = samples.len().max(1) as f64;

    let mut residuals = Vec::with_capacity(theta_grid.len());
    let mut standard_error: f64 = 0.0;
    for &theta in theta_grid {
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for &s in samples {
            let a = (theta - s).abs();
            sum += a;
            sum_sq += a * a;
        }
        let mean = sum / m;
        let var = if samples.len() > 1 {
            ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0)
        } else {
            0.0
        };
        standard_error = standard_error.max(half_spread * sqrt(var / m));
        let model = half_spread * mean + mid * theta;
        residuals.push(loss.value(theta) - model);
    }
    let constant = residuals.iter().sum::<f64>() / residuals.len() as f64;
    let max_deviation = residuals
        .iter()
        .map(|r| (r - constant).abs())
        .fold(0.0, f64::max);
    Ok(DecompositionReport {
        constant,
        max_deviation,
        standard_error,
        numerical_floor: 4.0 * half_spread * Q_TOLERANCE,
        num_samples: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logistic_at(u: f64) -> f64 {
        // u_draw such that d_left + u_draw * spread = u
        let l = GenLinLoss::Logistic;
        (u - l.d_left()) / l.spread()
    }

    #[test]
    fn catalog_round_trips() {
        for name in GenLinLoss::CATALOG {
            assert_eq!(GenLinLoss::from_name(name).unwrap().name(), name);
        }
        assert!(GenLinLoss::from_name("squared").is_err());
    }

    #[test]
    fn catalog_is_lipschitz_and_monotone() {
        let losses = [
            GenLinLoss::Hinge,
            GenLinLoss::Plus,
            GenLinLoss::Abs,
            GenLinLoss::Logistic,
            GenLinLoss::SmoothedHinge { beta: 0.2 },
        ];
        for loss in losses {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=20_000 {
                let t = -1.0 + i as f64 * 1e-4;
                let d = loss.derivative(t);
                assert!(d.abs() <= 1.0 + 1e-12, "{}", loss.name());
                assert!(d >= prev, "{} not monotone at {t}", loss.name());
                prev = d;
            }
            assert!(loss.d_left() <= loss.d_right());
        }
    }

    #[test]
    fn q_for_hinge_is_the_kink() {
        for &u in &[1e-6, 0.1, 0.5, 0.9, 0.999_999] {
            let s = sample_q(&GenLinLoss::Hinge, u).unwrap().value();
            assert!((s - 0.5).abs() <= 2.0 * Q_TOLERANCE, "{s}");
        }
    }

    #[test]
    fn q_for_abs_is_zero() {
        for &u in &[0.01, 0.3, 0.7, 0.99] {
            let s = sample_q(&GenLinLoss::Abs, u).unwrap().value();
            assert!(s.abs() <= 2.0 * Q_TOLERANCE);
        }
    }

    #[test]
    fn q_for_logistic_solves_derivative_equation() {
        // -1 / (1 + e^s) = -1/2  =>  s = 0
        let s = sample_q(&GenLinLoss::Logistic, logistic_at(-0.5)).unwrap().value();
        assert!(s.abs() <= 1e-8, "{s}");
    }

    #[test]
    fn q_flat_region_returns_maximal_point() {
        // u_draw = 0 maps to u = f'(-1) = -1 for the hinge; every s <= 1/2
        // has -1 in its subdifferential, the maximal one is 1/2.
        let s = sample_q(&GenLinLoss::Hinge, 0.0).unwrap().value();
        assert!((s - 0.5).abs() <= 2.0 * Q_TOLERANCE);
    }

    #[test]
    fn q_rejects_affine_and_bad_draws() {
        let affine = GenLinLoss::Custom {
            name: "affine",
            value: |t| 0.3 * t,
            derivative: |_| 0.3,
        };
        assert!(sample_q(&affine, 0.5).is_err());
        assert!(sample_q(&GenLinLoss::Abs, 1.0).is_err());
        assert!(sample_q(&GenLinLoss::Abs, -0.1).is_err());
    }

    #[test]
    fn q_detects_non_monotone_derivative() {
        let bumpy = GenLinLoss::Custom {
            name: "bumpy",
            value: |t| libm::cos(6.0 * t) / 6.0,
            derivative: |t| -libm::sin(6.0 * t),
        };
        let errs = (1..20)
            .map(|i| sample_q(&bumpy, i as f64 / 20.0))
            .filter(|r| matches!(r, Err(Error::InvariantViolation(_))))
            .count();
        assert!(errs > 0);
    }

    #[test]
    fn empirical_risk_examples() {
        let data = Dataset::new(
            alloc::vec![1.0, 0.0, 0.0, 0.6, -0.8, 0.0, 0.0, 0.0, 1.0],
            alloc::vec![1.0, -1.0, 0.5],
            3,
        )
        .unwrap();
        let zero = [0.0; 3];
        assert_eq!(eval_empirical_risk(&GenLinLoss::Hinge, &zero, &data).unwrap(), 0.5);

        let w = [0.2, -0.5, 0.7];
        let mut manual = 0.0;
        let rows: [([f64; 3], f64); 3] = [
            ([1.0, 0.0, 0.0], 1.0),
            ([0.6, -0.8, 0.0], -1.0),
            ([0.0, 0.0, 1.0], 0.5),
        ];
        for (x, y) in rows {
            let t = y * (x[0] * w[0] + x[1] * w[1] + x[2] * w[2]);
            manual += if t < 0.5 { 0.5 - t } else { 0.0 };
        }
        let got = eval_empirical_risk(&GenLinLoss::Hinge, &w, &data).unwrap();
        assert!((got - manual / 3.0).abs() < 1e-14);

        let single = Dataset::new(alloc::vec![1.0, 0.0], alloc::vec![1.0], 2).unwrap();
        assert_eq!(eval_empirical_risk(&GenLinLoss::Hinge, &[1.0, 0.0], &single).unwrap(), 0.0);
        assert!(matches!(
            eval_empirical_risk(&GenLinLoss::Hinge, &[1.0], &single),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn hinge_decomposition_exact_point_mass() {
        let r = decomposition_from_samples(&GenLinLoss::Hinge, &[-1.0, 0.0, 1.0], &[0.5]).unwrap();
        assert!((r.constant - 0.25).abs() < 1e-15);
        assert!(r.max_deviation < 1e-15);
    }

    #[test]
    fn abs_decomposition_has_zero_constant() {
        let r = verify_decomposition(&GenLinLoss::Abs, &[-1.0, -0.3, 0.0, 0.4, 1.0], 10_000, 3)
            .unwrap();
        assert!(r.constant.abs() < 1e-8);
        assert!(r.max_deviation < 1e-8);
    }

    #[test]
    fn decomposition_rejects_small_sample() {
        assert!(verify_decomposition(&GenLinLoss::Abs, &[0.0], 100, 0).is_err());
    }

    #[test]
    fn decomposition_within_four_sigma() {
        let grid: Vec<f64> = (0..=20).map(|i| -1.0 + 0.1 * i as f64).collect();
        for loss in [GenLinLoss::Logistic, GenLinLoss::SmoothedHinge { beta: 0.25 }] {
            let r = verify_decomposition(&loss, &grid, 20_000, 11).unwrap();
            assert!(r.within(4.0), "{}: {r:?}", loss.name());
        }
    }

    #[test]
    fn q_subgradient_contains_u() {
        let mut rng = StreamRng::seed_from_u64(5);
        for loss in [
            GenLinLoss::Hinge,
            GenLinLoss::Abs,
            GenLinLoss::Logistic,
            GenLinLoss::SmoothedHinge { beta: 0.3 },
            GenLinLoss::Plus,
        ] {
            for _ in 0..10_000 {
                let draw: f64 = rng.random();
                let u = loss.d_left() + draw * loss.spread();
                let s = sample_q(&loss, draw).unwrap().value();
                assert!((-1.0..=1.0).contains(&s));
                let left = loss.derivative((s - 1e-6).max(-1.0)) - 1e-6;
                let right = if s + 1e-6 >= 1.0 {
                    loss.d_right()
                } else {
                    loss.derivative(s + 1e-6)
                } + 1e-6;
                assert!(left <= u && u <= right, "{} s={s} u={u}", loss.name());
            }
        }
    }

    #[test]
    fn q_is_maximal_on_grid() {
        let mut rng = StreamRng::seed_from_u64(9);
        for loss in [GenLinLoss::Hinge, GenLinLoss::Abs, GenLinLoss::Logistic] {
            for _ in 0..1_000 {
                let draw: f64 = rng.random();
                let u = loss.d_left() + draw * loss.spread();
                let s = sample_q(&loss, draw).unwrap().value();
                // any s' well to the right must have left derivative > u
                let mut k = 0;
                loop {
                    let sp = -1.0 + k as f64 * 1e-4;
                    k += 1;
                    if sp > 1.0 {
                        break;
                    }
                    if sp <= s + 1e-6 {
                        continue;
                    }
                    let left = loss.derivative(sp - 1e-7);
                    assert!(left > u - 1e-6, "{} u={u} s={s} sp={sp}", loss.name());
                }
            }
        }
    }
}
