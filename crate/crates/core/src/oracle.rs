//! Server-side gradient reconstruction from noisy player reports.
//!
//! The polynomial `P(u) = sum_j c_j C(d,j) u^j (1-u)^(d-j)` is estimated
//! without bias by replacing each power with a product of independent noisy
//! copies: block `j` owns copies `jd .. jd + d` (zero based), the first `j`
//! of them feed the `u^j` product and the remaining `d - j` the `(1-u)`
//! product. Every copy is used exactly once per evaluation, which is what
//! makes the expectation of the product equal the product of expectations.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::approx::BernsteinPoly;
use crate::losses::{sample_q, GenLinLoss, QSample};
use crate::math::{dot, sqrt};
use crate::privacy::{num_copies, PlayerReport};
use crate::solver::GradientOracle;
use crate::{Error, Result, StreamRng};

/// Default pilot batch size for the noise certificate.
pub const PILOT_SAMPLES: usize = 200;

/// `(gamma, smoothness, sigma)` describing an inexact stochastic oracle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Certificate {
    /// Bias allowance.
    pub gamma: f64,
    /// Smoothness of the upper model, `1 / beta`.
    pub smoothness: f64,
    /// Measured standard deviation of the gradient estimate.
    pub sigma_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSample {
    pub gradient: Vec<f64>,
    pub player_id: u64,
    pub certificate: Certificate,
}

/// Which half of a block a copy feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    /// Contributes `u`.
    Power,
    /// Contributes `1 - u`.
    Complement,
}

/// `(block j, copy k, factor)` for every copy consumed when evaluating a
/// degree `d` polynomial, in evaluation order.
pub fn copy_schedule(d: usize) -> impl Iterator<Item = (usize, usize, Factor)> {
    (0..=d).flat_map(move |j| {
        (0..d).map(move |i| {
            let factor = if i < j { Factor::Power } else { Factor::Complement };
            (j, j * d + i, factor)
        })
    })
}

/// `sum_j weights[j] prod_{Power} u(k) prod_{Complement} (1 - u(k))`
/// following [`copy_schedule`]; `u(k)` is called once per copy.
pub fn block_sum<F: FnMut(usize) -> f64>(weights: &[f64], mut u: F) -> f64 {
    let d = weights.len() - 1;
    let mut total = 0.0;
    let mut current = usize::MAX;
    let mut product = 1.0;
    for (j, k, factor) in copy_schedule(d) {
        if j != current {
            if current != usize::MAX {
                total += weights[current] * product;
            }
            current = j;
            product = 1.0;
        }
        let v = u(k);
        product *= match factor {
            Factor::Power => v,
            Factor::Complement => 1.0 - v,
        };
    }
    if current != usize::MAX {
        total += weights[current] * product;
    }
    total
}

fn check_inputs(w: &[f64], report: &PlayerReport, poly: &BernsteinPoly) -> Result<()> {
    if report.degree() != poly.degree() {
        return Err(Error::domain(alloc::format!(
            "report degree {} does not match polynomial degree {}",
            report.degree(),
            poly.degree()
        )));
    }
    if w.len() != report.dim() {
        return Err(Error::Dimension {
            expected: report.dim(),
            got: w.len(),
        });
    }
    Ok(())
}

fn scaled_head(coef: f64, report: &PlayerReport) -> Vec<f64> {
    let y0 = report.y0();
    report.x0().iter().map(|x| coef * y0 * x).collect()
}

/// Noisy estimate of `P(to_unit(y <w, x>))` from the report's copies.
fn noisy_polynomial(w: &[f64], report: &PlayerReport, poly: &BernsteinPoly, weights: &[f64]) -> f64 {
    let map = poly.domain();
    block_sum(weights, |k| map.to_unit(report.y_copy(k) * dot(w, report.x_copy(k))))
}

/// Hinge-type gradient `(sum_j c_j C(d,j) t_j s_j) y_0 x_0`.
pub fn hinge_gradient(w: &[f64], report: &PlayerReport, poly: &BernsteinPoly) -> Result<OracleSample> {
    linear_reduction_gradient(w, report, poly, 1.0, 0.0)
}

/// `(scale * P_hat + offset) y_0 x_0`. With the plus-function polynomial,
/// `scale = 2, offset = -1` gives the absolute value through
/// `|t| = 2 max(0, t) - t`.
pub fn linear_reduction_gradient(
    w: &[f64],
    report: &PlayerReport,
    poly: &BernsteinPoly,
    scale: f64,
    offset: f64,
) -> Result<OracleSample> {
    check_inputs(w, report, poly)?;
    let weights = poly.weights();
    let est = noisy_polynomial(w, report, poly, &weights);
    Ok(OracleSample {
        gradient: scaled_head(scale * est + offset, report),
        player_id: report.player_id,
        certificate: Certificate::default(),
    })
}

/// Gradient for a general convex 1-Lipschitz loss via the kink
/// decomposition. `poly` must approximate the smoothed plus derivative.
///
/// The scalar coefficient is
/// `(f'(1) - f'(-1)) (P_hat - 1/2) + (f'(1) + f'(-1)) / 2`, which is the
/// derivative of the smoothed decomposition and equals
/// `(f'(1) - f'(-1)) P_hat + f'(-1)`.
pub fn genlin_gradient(
    w: &[f64],
    report: &PlayerReport,
    poly: &BernsteinPoly,
    loss: &GenLinLoss,
    s_draws: &[QSample],
) -> Result<OracleSample> {
    check_inputs(w, report, poly)?;
    let m = num_copies(report.degree());
    if s_draws.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: s_draws.len(),
        });
    }
    let map = poly.domain();
    let weights = poly.weights();
    let est = block_sum(&weights, |k| {
        let t = report.y_copy(k) * dot(w, report.x_copy(k));
        map.to_unit((t - s_draws[k].value()) / 2.0)
    });
    Ok(OracleSample {
        gradient: scaled_head(genlin_coefficient(loss, est), report),
        player_id: report.player_id,
        certificate: Certificate::default(),
    })
}

#[inline]
fn genlin_coefficient(loss: &GenLinLoss, poly_value: f64) -> f64 {
    let (dl, dr) = (loss.d_left(), loss.d_right());
    (dr - dl) * (poly_value - 0.5) + 0.5 * (dr + dl)
}

/// Noise-free `P(to_unit(y <w, x>)) y x`.
pub fn surrogate_hinge_gradient(w: &[f64], x: &[f64], y: f64, poly: &BernsteinPoly) -> Vec<f64> {
    let coef = poly.eval_raw(y * dot(w, x));
    x.iter().map(|v| coef * y * v).collect()
}

/// Noise-free genlin gradient for a fixed kink `s`.
pub fn surrogate_genlin_gradient(
    w: &[f64],
    x: &[f64],
    y: f64,
    poly: &BernsteinPoly,
    loss: &GenLinLoss,
    s: f64,
) -> Vec<f64> {
    let t = y * dot(w, x);
    let coef = genlin_coefficient(loss, poly.eval_raw((t - s) / 2.0));
    x.iter().map(|v| coef * y * v).collect()
}

/// Builds the certificate: `gamma = 2 * sup error`, smoothness `1/beta`,
/// sigma measured on a pilot batch of gradient samples.
pub fn certify(sup_error: f64, beta: f64, pilot: &[Vec<f64>]) -> Certificate {
    Certificate {
        gamma: 2.0 * sup_error.max(0.0),
        smoothness: 1.0 / beta,
        sigma_bound: empirical_sigma(pilot),
    }
}

/// `sqrt(mean ||g - g_bar||^2)`, using the unbiased denominator.
pub fn empirical_sigma(samples: &[Vec<f64>]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let p = samples[0].len();
    let m = samples.len() as f64;
    let mut mean = vec![0.0; p];
    for g in samples {
        for (a, v) in mean.iter_mut().zip(g) {
            *a += v / m;
        }
    }
    let ss: f64 = samples
        .iter()
        .map(|g| g.iter().zip(&mean).map(|(v, a)| (v - a) * (v - a)).sum::<f64>())
        .sum();
    sqrt(ss / (m - 1.0))
}

/// How the server turns a report into a gradient.
#[derive(Debug, Clone)]
pub enum GradientRoute {
    /// Hinge-type losses approximated directly (hinge or plus polynomial).
    Direct { poly: BernsteinPoly },
    /// `scale * P_hat + offset`, e.g. the absolute value through the plus
    /// function.
    Reduction {
        poly: BernsteinPoly,
        scale: f64,
        offset: f64,
    },
    /// Kink decomposition with fresh Q draws per copy.
    GenLin { poly: BernsteinPoly, loss: GenLinLoss },
}

impl GradientRoute {
    pub fn poly(&self) -> &BernsteinPoly {
        match self {
            GradientRoute::Direct { poly }
            | GradientRoute::Reduction { poly, .. }
            | GradientRoute::GenLin { poly, .. } => poly,
        }
    }
}

/// A stochastic oracle backed by a fixed set of reports. Reports are read,
/// never regenerated.
#[derive(Debug, Clone)]
pub struct ReportOracle<'a> {
    reports: &'a [PlayerReport],
    route: GradientRoute,
    pub certificate: Certificate,
    q_buf: Vec<QSample>,
}

impl<'a> ReportOracle<'a> {
    pub fn new(reports: &'a [PlayerReport], route: GradientRoute) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::domain("no reports to train on"))?;
        let d = route.poly().degree();
        if let Some(bad) = reports
            .iter()
            .find(|r| r.degree() != d || r.dim() != first.dim())
        {
            return Err(Error::domain(alloc::format!(
                "report of player {} has degree {} / dim {}, expected {d} / {}",
                bad.player_id,
                bad.degree(),
                bad.dim(),
                first.dim()
            )));
        }
        Ok(Self {
            reports,
            route,
            certificate: Certificate::default(),
            q_buf: Vec::new(),
        })
    }

    pub fn route(&self) -> &GradientRoute {
        &self.route
    }

    pub fn reports(&self) -> &[PlayerReport] {
        self.reports
    }

    pub fn sample(&mut self, w: &[f64], player: usize, rng: &mut StreamRng) -> Result<OracleSample> {
        let report = &self.reports[player];
        let mut out = match &self.route {
            GradientRoute::Direct { poly } => hinge_gradient(w, report, poly)?,
            GradientRoute::Reduction {
                poly,
                scale,
                offset,
            } => linear_reduction_gradient(w, report, poly, *scale, *offset)?,
            GradientRoute::GenLin { poly, loss } => {
                self.q_buf.clear();
                for _ in 0..num_copies(poly.degree()) {
                    self.q_buf.push(sample_q(loss, rng.random::<f64>())?);
                }
                genlin_gradient(w, report, poly, loss, &self.q_buf)?
            }
        };
        out.certificate = self.certificate;
        Ok(out)
    }

    /// Draws `samples` players uniformly at `w` and measures the spread of
    /// the resulting gradients.
    pub fn pilot(&mut self, w: &[f64], samples: usize, rng: &mut StreamRng) -> Result<Vec<Vec<f64>>> {
        let n = self.reports.len();
        (0..samples)
            .map(|_| {
                let i = rng.random_range(0..n);
                self.sample(w, i, rng).map(|s| s.gradient)
            })
            .collect()
    }
}

impl GradientOracle for ReportOracle<'_> {
    fn dim(&self) -> usize {
        self.reports[0].dim()
    }

    fn num_players(&self) -> usize {
        self.reports.len()
    }

    fn gradient(&mut self, w: &[f64], player: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        self.sample(w, player, rng).map(|s| s.gradient)
    }

    fn player_id(&self, player: usize) -> u64 {
        self.reports[player].player_id
    }
}
