//! Bernstein approximation of the smoothed loss derivatives.
//!
//! Every polynomial here lives on `[0, 1]`. Targets defined on some other
//! interval `[lo, hi]` are pulled back through the affine map recorded in
//! [`DomainMap`], so `g(u) = f(lo + u (hi - lo))` is what actually gets
//! interpolated.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{binomial, exp, ln, ln_binomial, sqrt};
use crate::{Error, Result};

/// Largest degree `build_derivative_poly` accepts unless told otherwise.
pub const DEFAULT_DEGREE_CEILING: usize = 1024;

/// Grid spacing used when measuring approximation error.
pub const DEFAULT_GRID_STEP: f64 = 1e-3;

/// Affine map from a raw interval `[lo, hi]` onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainMap {
    lo: f64,
    hi: f64,
}

impl DomainMap {
    pub const UNIT: DomainMap = DomainMap { lo: 0.0, hi: 1.0 };
    pub const SYMMETRIC: DomainMap = DomainMap { lo: -1.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(Error::domain("domain map needs finite lo < hi"));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Raw argument to the unit interval.
    #[inline]
    pub fn to_unit(&self, t: f64) -> f64 {
        (t - self.lo) / (self.hi - self.lo)
    }

    /// Unit interval back to the raw argument.
    #[inline]
    pub fn from_unit(&self, u: f64) -> f64 {
        self.lo + u * (self.hi - self.lo)
    }
}

/// `C(k, v) x^v (1 - x)^(k - v)`, evaluated in the log domain.
pub fn bernstein_basis(v: usize, k: usize, x: f64) -> Result<f64> {
    if v > k {
        return Err(Error::domain("basis index v must satisfy 0 <= v <= k"));
    }
    Ok(basis_unchecked(ln_binomial(k, v), v, k, x))
}

#[inline]
fn basis_unchecked(ln_c: f64, v: usize, k: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return if v == 0 { 1.0 } else { 0.0 };
    }
    if x >= 1.0 {
        return if v == k { 1.0 } else { 0.0 };
    }
    exp(ln_c + v as f64 * ln(x) + (k - v) as f64 * ln(1.0 - x))
}

/// A polynomial in Bernstein form, `sum_j c_j b_{j,d}(u)` for `u` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BernsteinPoly {
    coeffs: Vec<f64>,
    domain: DomainMap,
    ln_binomials: Vec<f64>,
}

impl BernsteinPoly {
    pub fn new(coeffs: Vec<f64>, domain: DomainMap) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(Error::domain("a Bernstein polynomial needs degree >= 1"));
        }
        if let Some(j) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                what: alloc::format!("coefficient {j}"),
            });
        }
        let d = coeffs.len() - 1;
        let ln_binomials = (0..=d).map(|v| ln_binomial(d, v)).collect();
        Ok(Self {
            coeffs,
            domain,
            ln_binomials,
        })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn domain(&self) -> DomainMap {
        self.domain
    }

    /// `C(d, j)` for each `j`, in the form the oracle multiplies with.
    pub fn weights(&self) -> Vec<f64> {
        let d = self.degree();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| c * binomial(d, j))
            .collect()
    }

    /// Value at `u` in `[0, 1]` (clamped).
    pub fn eval(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let d = self.degree();
        self.coeffs
            .iter()
            .zip(&self.ln_binomials)
            .enumerate()
            .map(|(v, (c, lc))| c * basis_unchecked(*lc, v, d, u))
            .sum()
    }

    /// Value at a raw argument, after mapping through the domain.
    pub fn eval_raw(&self, t: f64) -> f64 {
        self.eval(self.domain.to_unit(t))
    }

    /// De Casteljau evaluation. Quadratic in the degree; used as a
    /// cross-check for [`BernsteinPoly::eval`].
    pub fn eval_de_casteljau(&self, u: f64) -> f64 {
        let mut b = self.coeffs.clone();
        let w = 1.0 - u;
        for r in (1..b.len()).rev() {
            for j in 0..r {
                b[j] = w * b[j] + u * b[j + 1];
            }
        }
        b[0]
    }
}

/// Bernstein polynomial of `f` on `[0, 1]`: `coeffs[v] = f(v / k)`.
pub fn bernstein_interpolate<F: Fn(f64) -> f64>(f: F, k: usize) -> Result<BernsteinPoly> {
    interpolate_on(f, k, DomainMap::UNIT)
}

/// Interpolates `f` on `domain`, i.e. `g(u) = f(domain.from_unit(u))` on `[0, 1]`.
pub fn interpolate_on<F: Fn(f64) -> f64>(
    f: F,
    k: usize,
    domain: DomainMap,
) -> Result<BernsteinPoly> {
    if k == 0 {
        return Err(Error::domain("Bernstein degree must be >= 1"));
    }
    let mut coeffs = Vec::with_capacity(k + 1);
    for v in 0..=k {
        let y = f(domain.from_unit(v as f64 / k as f64));
        if !y.is_finite() {
            return Err(Error::NonFinite {
                what: alloc::format!("f({v}/{k})"),
            });
        }
        coeffs.push(y);
    }
    BernsteinPoly::new(coeffs, domain)
}

/// Iterated Bernstein operator `I - (I - B_k)^h` applied to `f`.
///
/// The result is still a degree-`k` polynomial, so it is returned in
/// Bernstein form; its coefficients are the node values of
/// `sum_{i=1}^h C(h,i) (-1)^(i-1) B_k^(i-1) f`.
pub fn iterated_bernstein<F: Fn(f64) -> f64>(f: F, k: usize, h: usize) -> Result<BernsteinPoly> {
    if h == 0 {
        return Err(Error::domain("iteration order h must be >= 1"));
    }
    let base = bernstein_interpolate(f, k)?;
    if h == 1 {
        return Ok(base);
    }
    // basis[u][v] = b_{v,k}(u / k)
    let basis: Vec<Vec<f64>> = (0..=k)
        .map(|u| {
            let x = u as f64 / k as f64;
            (0..=k)
                .map(|v| basis_unchecked(ln_binomial(k, v), v, k, x))
                .collect()
        })
        .collect();

    let mut power = base.coeffs().to_vec();
    let mut combined = vec![0.0; k + 1];
    for i in 1..=h {
        let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
        let w = sign * binomial(h, i);
        for (acc, p) in combined.iter_mut().zip(&power) {
            *acc += w * p;
        }
        if i < h {
            power = basis
                .iter()
                .map(|row| row.iter().zip(&power).map(|(b, p)| b * p).sum())
                .collect();
        }
    }
    BernsteinPoly::new(combined, DomainMap::UNIT)
}

/// Smoothed hinge `f_b(x) = (1/2 - x + sqrt((1/2 - x)^2 + b^2)) / 2`.
pub fn smoothed_hinge(x: f64, beta: f64) -> f64 {
    let z = 0.5 - x;
    (z + sqrt(z * z + beta * beta)) / 2.0
}

pub fn smoothed_hinge_derivative(x: f64, beta: f64) -> f64 {
    let z = x - 0.5;
    (-1.0 + z / sqrt(z * z + beta * beta)) / 2.0
}

/// `f''_b(x) = b^2 / (2 ((x - 1/2)^2 + b^2)^(3/2))`, at most `1 / (2b)`.
pub fn smoothed_hinge_second_derivative(x: f64, beta: f64) -> f64 {
    let z = x - 0.5;
    let r = z * z + beta * beta;
    beta * beta / (2.0 * r * sqrt(r))
}

/// Smoothed plus function `h_b(x) = (x + sqrt(x^2 + b^2)) / 2`.
pub fn smoothed_plus(x: f64, beta: f64) -> f64 {
    (x + sqrt(x * x + beta * beta)) / 2.0
}

pub fn smoothed_plus_derivative(x: f64, beta: f64) -> f64 {
    (1.0 + x / sqrt(x * x + beta * beta)) / 2.0
}

/// Which smoothed derivative to approximate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DerivativeKind {
    Hinge,
    Plus,
}

impl DerivativeKind {
    pub fn name(&self) -> &'static str {
        match self {
            DerivativeKind::Hinge => "hinge",
            DerivativeKind::Plus => "plus",
        }
    }

    pub fn derivative(&self, t: f64, beta: f64) -> f64 {
        match self {
            DerivativeKind::Hinge => smoothed_hinge_derivative(t, beta),
            DerivativeKind::Plus => smoothed_plus_derivative(t, beta),
        }
    }
}

impl core::str::FromStr for DerivativeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hinge" => Ok(DerivativeKind::Hinge),
            "plus" => Ok(DerivativeKind::Plus),
            other => Err(Error::domain(alloc::format!(
                "unknown derivative kind `{other}` (expected hinge or plus)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    beta: f64,
    alpha: f64,
    degree_override: Option<usize>,
}

impl SmoothingParams {
    pub fn new(beta: f64, alpha: f64, degree_override: Option<usize>) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::domain("smoothing scale beta must lie in (0, 1]"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::domain("target excess risk alpha must be positive"));
        }
        if degree_override == Some(0) {
            return Err(Error::domain("degree override must be >= 1"));
        }
        Ok(Self {
            beta,
            alpha,
            degree_override,
        })
    }

    /// `beta = alpha / 4`, the pairing used by the sample-complexity bound.
    pub fn from_alpha(alpha: f64, degree_override: Option<usize>) -> Result<Self> {
        Self::new(alpha / 4.0, alpha, degree_override)
    }

    /// Fixed degree, with alpha only nominal.
    pub fn with_degree(beta: f64, degree: usize) -> Result<Self> {
        Self::new(beta, 4.0 * beta, Some(degree))
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn degree_override(&self) -> Option<usize> {
        self.degree_override
    }

    /// `degree_override`, else `ceil(2 / (beta^2 alpha))`.
    pub fn degree(&self) -> usize {
        if let Some(d) = self.degree_override {
            return d;
        }
        let raw = 2.0 / (self.beta * self.beta * self.alpha);
        let nearest = libm::round(raw);
        // 2/(0.125^2 * 0.5) must land on 256, not 257
        let d = if (raw - nearest).abs() <= 1e-9 * raw {
            nearest
        } else {
            libm::ceil(raw)
        };
        if d >= usize::MAX as f64 {
            usize::MAX
        } else {
            (d as usize).max(1)
        }
    }
}

/// Sup and mean absolute error of `poly` against `target` on a uniform grid
/// of `[0, 1]`.
pub fn grid_error<F: Fn(f64) -> f64>(poly: &BernsteinPoly, target: F, step: f64) -> (f64, f64) {
    let n = libm::round(1.0 / step) as usize;
    let mut sup: f64 = 0.0;
    let mut sum = 0.0;
    for i in 0..=n {
        let u = (i as f64 * step).min(1.0);
        let e = (poly.eval(u) - target(u)).abs();
        sup = sup.max(e);
        sum += e;
    }
    (sup, sum / (n + 1) as f64)
}

/// A fitted derivative polynomial together with its measured error.
#[derive(Debug, Clone)]
pub struct DerivativeApprox {
    pub kind: DerivativeKind,
    pub beta: f64,
    pub poly: BernsteinPoly,
    pub sup_error: f64,
    pub mean_error: f64,
}

pub fn build_derivative_poly(
    kind: DerivativeKind,
    params: &SmoothingParams,
) -> Result<DerivativeApprox> {
    build_derivative_poly_with(kind, params, DEFAULT_DEGREE_CEILING, DEFAULT_GRID_STEP)
}

/// Approximates `g(u) = f'_b(2u - 1)` (hinge or plus) on `[0, 1]`.
pub fn build_derivative_poly_with(
    kind: DerivativeKind,
    params: &SmoothingParams,
    ceiling: usize,
    grid_step: f64,
) -> Result<DerivativeApprox> {
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(Error::domain("grid step must lie in (0, 0.5]"));
    }
    let degree = params.degree();
    if degree > ceiling {
        return Err(Error::Sizing { degree, ceiling });
    }
    let beta = params.beta();
    let target = |t: f64| kind.derivative(t, beta);
    let poly = interpolate_on(target, degree, DomainMap::SYMMETRIC)?;
    let (sup_error, mean_error) =
        grid_error(&poly, |u| target(DomainMap::SYMMETRIC.from_unit(u)), grid_step);
    Ok(DerivativeApprox {
        kind,
        beta,
        poly,
        sup_error,
        mean_error,
    })
}
