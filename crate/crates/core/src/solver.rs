//! Projected stochastic gradient descent over a Euclidean ball, driven by a
//! biased stochastic oracle.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};

use crate::math::{all_finite, norm, sqrt};
use crate::{Error, Result, StreamRng};

/// A per-player source of stochastic gradients.
pub trait GradientOracle {
    fn dim(&self) -> usize;
    fn num_players(&self) -> usize;
    fn gradient(&mut self, w: &[f64], player: usize, rng: &mut StreamRng) -> Result<Vec<f64>>;

    /// Identifier recorded in the trace for player index `player`.
    fn player_id(&self, player: usize) -> u64 {
        player as u64
    }
}

/// Euclidean projection onto the ball of radius `radius`.
pub fn project_ball(w: &[f64], radius: f64) -> Vec<f64> {
    let mut out = w.to_vec();
    project_ball_in_place(&mut out, radius);
    out
}

pub fn project_ball_in_place(w: &mut [f64], radius: f64) {
    let n = norm(w);
    if n > radius {
        let s = radius / n;
        w.iter_mut().for_each(|v| *v *= s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// `eta_t = step_scale`
    Fixed,
    /// `eta_t = step_scale / (sigma_hat sqrt(t))`
    InvSqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    Last,
    /// Uniform average of the final `ceil(n_iter / 2)` iterates.
    UniformTail,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub iterations: usize,
    pub radius: f64,
    pub step_rule: StepRule,
    pub step_scale: f64,
    pub averaging: Averaging,
    /// Noise level used by [`StepRule::InvSqrt`]; values `<= 0` are treated
    /// as 1.
    pub sigma_hat: f64,
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(iterations: usize, seed: u64) -> Self {
        Self {
            iterations,
            radius: 1.0,
            step_rule: StepRule::InvSqrt,
            step_scale: 1.0,
            averaging: Averaging::UniformTail,
            sigma_hat: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::domain("iterations must be >= 1"));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::domain("radius must be positive"));
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::domain("step scale must be positive"));
        }
        Ok(())
    }

    pub fn step_size(&self, t: usize) -> f64 {
        match self.step_rule {
            StepRule::Fixed => self.step_scale,
            StepRule::InvSqrt => {
                let sigma = if self.sigma_hat > 0.0 && self.sigma_hat.is_finite() {
                    self.sigma_hat
                } else {
                    1.0
                };
                self.step_scale / (sigma * sqrt(t as f64))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub player_id: u64,
    pub surrogate_risk: Option<f64>,
    pub iterate_norm: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutput {
    pub w: Vec<f64>,
    pub trace: Trace,
}

/// Returned when the oracle misbehaves; carries the trace up to the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverAbort {
    pub iteration: usize,
    pub error: Error,
    pub trace: Trace,
}

impl fmt::Display for SolverAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "solver aborted at iteration {}: {}", self.iteration, self.error)
    }
}

impl core::error::Error for SolverAbort {}

/// Runs projected SGD from `w_1 = 0`, sampling players uniformly with
/// replacement.
pub fn run_sigm<O: GradientOracle + ?Sized>(
    oracle: &mut O,
    config: &SolverConfig,
) -> core::result::Result<SolverOutput, SolverAbort> {
    let abort = |iteration, error, trace| SolverAbort {
        iteration,
        error,
        trace,
    };
    if let Err(e) = config.validate() {
        return Err(abort(0, e, Trace::default()));
    }
    let n = oracle.num_players();
    if n == 0 {
        return Err(abort(0, Error::domain("oracle has no players"), Trace::default()));
    }
    let p = oracle.dim();
    let mut rng = StreamRng::seed_from_u64(config.seed);
    let mut w = vec![0.0; p];
    let tail = config.iterations.div_ceil(2);
    let tail_start = config.iterations - tail + 1;
    let mut avg = vec![0.0; p];
    let mut trace = Trace {
        records: Vec::with_capacity(config.iterations),
    };

    for t in 1..=config.iterations {
        let player = rng.random_range(0..n);
        let g = match oracle.gradient(&w, player, &mut rng) {
            Ok(g) => g,
            Err(e) => return Err(abort(t, e, trace)),
        };
        if g.len() != p {
            return Err(abort(t, Error::Dimension { expected: p, got: g.len() }, trace));
        }
        if !all_finite(&g) {
            return Err(abort(
                t,
                Error::NonFinite {
                    what: alloc::format!("gradient at iteration {t}"),
                },
                trace,
            ));
        }
        let eta = config.step_size(t);
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= eta * gi;
        }
        project_ball_in_place(&mut w, config.radius);
        if t >= tail_start {
            for (a, wi) in avg.iter_mut().zip(&w) {
                *a += wi / tail as f64;
            }
        }
        trace.records.push(TraceRecord {
            iteration: t,
            player_id: oracle.player_id(player),
            surrogate_risk: None,
            iterate_norm: norm(&w),
            step_size: eta,
        });
    }

    let w_out = match config.averaging {
        Averaging::Last => w,
        Averaging::UniformTail => {
            // rounding can push the average a hair outside the ball
            project_ball_in_place(&mut avg, config.radius);
            avg
        }
    };
    Ok(SolverOutput { w: w_out, trace })
}
