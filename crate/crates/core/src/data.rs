//! Datasets satisfying the norm bounds `||x||_2 <= 1`, `|y| <= 1`, and
//! synthetic generators for them.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::math::{dot, exp, norm};
use crate::{Error, Result, StreamRng};

/// Slack allowed on the norm bounds for values that went through a text
/// round trip.
pub const NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    /// Planted direction, when the generator used one.
    pub planted: Option<Vec<f64>>,
}

/// `n` records `(x_i, y_i)`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    xs: Vec<f64>,
    ys: Vec<f64>,
    dim: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || ys.is_empty() {
            return Err(Error::domain("a dataset needs n >= 1 and p >= 1"));
        }
        if xs.len() != ys.len() * dim {
            return Err(Error::Dimension {
                expected: ys.len() * dim,
                got: xs.len(),
            });
        }
        for (i, (x, &y)) in xs.chunks_exact(dim).zip(&ys).enumerate() {
            check_record(x, y).map_err(|e| match e {
                Error::NormViolation(msg) => Error::NormViolation(alloc::format!("record {i}: {msg}")),
                other => other,
            })?;
        }
        Ok(Self {
            xs,
            ys,
            dim,
            provenance: Provenance::default(),
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn records(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.xs.chunks_exact(self.dim).zip(self.ys.iter().copied())
    }
}

/// Checks the per-record bounds.
pub fn check_record(x: &[f64], y: f64) -> Result<()> {
    if !x.iter().all(|v| v.is_finite()) || !y.is_finite() {
        return Err(Error::NonFinite {
            what: "record".into(),
        });
    }
    let nx = norm(x);
    if nx > 1.0 + NORM_SLACK {
        return Err(Error::NormViolation(alloc::format!("||x||_2 = {nx}")));
    }
    if y.abs() > 1.0 + NORM_SLACK {
        return Err(Error::NormViolation(alloc::format!("|y| = {}", y.abs())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Labels `sign(<w*, x>)`, with points closer than `margin` to the
    /// hyperplane resampled.
    SeparableSvm,
    /// Labels in `{-1, 1}` with `P(y = 1) = 1 / (1 + exp(-LOGISTIC_SCALE <w*, x>))`.
    LogisticPlanted,
    /// `x` uniform in the ball, `y` uniform in `[-1, 1]`.
    UniformBall,
}

/// Slope of the planted logistic model.
pub const LOGISTIC_SCALE: f64 = 5.0;

impl SyntheticKind {
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::SeparableSvm => "separable_svm",
            SyntheticKind::LogisticPlanted => "logistic_planted",
            SyntheticKind::UniformBall => "uniform_ball",
        }
    }
}

impl core::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separable_svm" => Ok(SyntheticKind::SeparableSvm),
            "logistic_planted" => Ok(SyntheticKind::LogisticPlanted),
            "uniform_ball" => Ok(SyntheticKind::UniformBall),
            other => Err(Error::domain(alloc::format!("unknown generator `{other}`"))),
        }
    }
}

fn unit_direction(rng: &mut StreamRng, p: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

/// Uniform point in the unit `p`-ball.
pub fn uniform_in_ball(rng: &mut StreamRng, p: usize) -> Vec<f64> {
    let dir = unit_direction(rng, p);
    let r = libm::pow(rng.random::<f64>(), 1.0 / p as f64);
    dir.into_iter().map(|c| c * r).collect()
}

pub fn generate_synthetic(
    kind: SyntheticKind,
    n: usize,
    p: usize,
    margin: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || p == 0 {
        return Err(Error::domain("n and p must be >= 1"));
    }
    if !(0.0..0.5).contains(&margin) {
        return Err(Error::domain("margin must lie in [0, 0.5)"));
    }
    let mut rng = StreamRng::seed_from_u64(seed);
    let planted = unit_direction(&mut rng, p);
    let mut xs = Vec::with_capacity(n * p);
    let mut ys = vec![0.0; n];
    for y in ys.iter_mut() {
        let x = match kind {
            SyntheticKind::SeparableSvm => loop {
                let x = uniform_in_ball(&mut rng, p);
                let m = dot(&x, &planted);
                if m.abs() >= margin && m != 0.0 {
                    *y = m.signum();
                    break x;
                }
            },
            SyntheticKind::LogisticPlanted => {
                let x = uniform_in_ball(&mut rng, p);
                let prob = 1.0 / (1.0 + exp(-LOGISTIC_SCALE * dot(&x, &planted)));
                *y = if rng.random::<f64>() < prob { 1.0 } else { -1.0 };
                x
            }
            SyntheticKind::UniformBall => {
                let x = uniform_in_ball(&mut rng, p);
                *y = rng.random_range(-1.0..=1.0);
                x
            }
        };
        xs.extend_from_slice(&x);
    }
    let data = Dataset::new(xs, ys, p)?;
    Ok(data.with_provenance(Provenance {
        generator: kind.name().into(),
        seed,
        planted: Some(planted),
    }))
}
