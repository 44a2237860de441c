//! Player-side Gaussian randomizer and the basic-composition accountant.
//!
//! A player with record `(x, y)` releases one "head" copy `(x_0, y_0)` and
//! `d(d+1)` further copies, each an independent Gaussian perturbation of the
//! same record. Every vector or scalar release has l2 sensitivity 2, since
//! two records both lie in unit balls.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::data::check_record;
use crate::math::{ln, norm, sqrt};
use crate::{Error, Result, StreamRng};

/// l2 sensitivity of every single release.
pub const RELEASE_SENSITIVITY: f64 = 2.0;

/// Number of noisy copies beyond the head copy for degree `d`.
pub const fn num_copies(d: usize) -> usize {
    d * (d + 1)
}

/// Number of separately accounted releases: x and y for the head and for
/// every copy.
pub const fn num_releases(d: usize) -> usize {
    2 * (1 + num_copies(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccountingMode {
    /// Variances copied from the protocol listing; the accountant reports
    /// whatever total they actually compose to.
    PaperFaithful,
    /// Budget split evenly over all releases so the total is exactly the
    /// requested `(epsilon, delta)`.
    Calibrated,
}

impl AccountingMode {
    pub fn name(&self) -> &'static str {
        match self {
            AccountingMode::PaperFaithful => "paper",
            AccountingMode::Calibrated => "calibrated",
        }
    }
}

impl core::str::FromStr for AccountingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "paper_faithful" => Ok(AccountingMode::PaperFaithful),
            "calibrated" => Ok(AccountingMode::Calibrated),
            other => Err(Error::domain(alloc::format!(
                "unknown accounting mode `{other}` (expected paper or calibrated)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
    mode: AccountingMode,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64, mode: AccountingMode) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::domain("epsilon must be positive and finite"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::domain("delta must lie in (0, 1)"));
        }
        Ok(Self {
            epsilon,
            delta,
            mode,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn mode(&self) -> AccountingMode {
        self.mode
    }
}

/// Gaussian mechanism calibration `sigma^2 = 2 ln(1.25/delta) Delta^2 / eps^2`.
pub fn gaussian_variance(epsilon: f64, delta: f64, sensitivity: f64) -> f64 {
    2.0 * ln(1.25 / delta) * sensitivity * sensitivity / (epsilon * epsilon)
}

/// Inverse of [`gaussian_variance`]: the epsilon a given variance buys.
pub fn gaussian_epsilon(variance: f64, delta: f64, sensitivity: f64) -> f64 {
    sqrt(2.0 * ln(1.25 / delta) * sensitivity * sensitivity / variance)
}

/// Basic composition: budgets add up.
pub fn compose<I: IntoIterator<Item = (f64, f64)>>(releases: I) -> (f64, f64) {
    releases
        .into_iter()
        .fold((0.0, 0.0), |(e, d), (ei, di)| (e + ei, d + di))
}

/// Per-release noise variances and the total they compose to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePlan {
    pub head_var: f64,
    pub copy_var: f64,
    /// Per-release delta used for the head and copy releases.
    pub head_delta: f64,
    pub copy_delta: f64,
    pub composed_epsilon: f64,
    pub composed_delta: f64,
    /// Set when some single release is calibrated with epsilon >= 1, outside
    /// the range the classical Gaussian mechanism bound covers.
    pub large_release_epsilon: bool,
    /// Test-only plan with no noise at all.
    pub zero_noise: bool,
}

impl NoisePlan {
    /// No noise, no privacy. For exactness checks only.
    pub fn zero_noise() -> Self {
        Self {
            head_var: 0.0,
            copy_var: 0.0,
            head_delta: 0.0,
            copy_delta: 0.0,
            composed_epsilon: f64::INFINITY,
            composed_delta: 0.0,
            large_release_epsilon: false,
            zero_noise: true,
        }
    }

    pub fn head_epsilon(&self) -> f64 {
        gaussian_epsilon(self.head_var, self.head_delta, RELEASE_SENSITIVITY)
    }

    pub fn copy_epsilon(&self) -> f64 {
        gaussian_epsilon(self.copy_var, self.copy_delta, RELEASE_SENSITIVITY)
    }
}

pub fn plan_noise(budget: &PrivacyBudget, d: usize) -> Result<NoisePlan> {
    if d == 0 {
        return Err(Error::domain("degree must be >= 1"));
    }
    let (eps, delta) = (budget.epsilon, budget.delta);
    let copies = num_copies(d) as f64;
    let (head_var, copy_var, head_delta, copy_delta) = match budget.mode {
        AccountingMode::PaperFaithful => {
            let l = ln(1.25 / delta);
            (
                32.0 * l / (eps * eps),
                8.0 * l * copies * copies / (eps * eps),
                delta,
                delta,
            )
        }
        AccountingMode::Calibrated => {
            let k = num_releases(d) as f64;
            let var = gaussian_variance(eps / k, delta / k, RELEASE_SENSITIVITY);
            (var, var, delta / k, delta / k)
        }
    };
    let head_eps = gaussian_epsilon(head_var, head_delta, RELEASE_SENSITIVITY);
    let copy_eps = gaussian_epsilon(copy_var, copy_delta, RELEASE_SENSITIVITY);
    let releases = core::iter::repeat_n((head_eps, head_delta), 2)
        .chain(core::iter::repeat_n((copy_eps, copy_delta), 2 * num_copies(d)));
    let (composed_epsilon, composed_delta) = compose(releases);
    Ok(NoisePlan {
        head_var,
        copy_var,
        head_delta,
        copy_delta,
        composed_epsilon,
        composed_delta,
        large_release_epsilon: head_eps >= 1.0 || copy_eps >= 1.0,
        zero_noise: false,
    })
}

/// One player's single noninteractive message.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerReport {
    pub player_id: u64,
    degree: usize,
    x0: Vec<f64>,
    y0: f64,
    /// `d(d+1)` copies of dimension `p`, row-major.
    x_copies: Vec<f64>,
    y_copies: Vec<f64>,
}

impl PlayerReport {
    pub fn new(
        player_id: u64,
        degree: usize,
        x0: Vec<f64>,
        y0: f64,
        x_copies: Vec<f64>,
        y_copies: Vec<f64>,
    ) -> Result<Self> {
        let p = x0.len();
        let m = num_copies(degree);
        if degree == 0 || p == 0 {
            return Err(Error::domain("report needs degree >= 1 and p >= 1"));
        }
        if y_copies.len() != m {
            return Err(Error::Dimension {
                expected: m,
                got: y_copies.len(),
            });
        }
        if x_copies.len() != m * p {
            return Err(Error::Dimension {
                expected: m * p,
                got: x_copies.len(),
            });
        }
        let finite = x0.iter().chain(&x_copies).chain(&y_copies).all(|v| v.is_finite())
            && y0.is_finite();
        if !finite {
            return Err(Error::NonFinite {
                what: alloc::format!("report of player {player_id}"),
            });
        }
        Ok(Self {
            player_id,
            degree,
            x0,
            y0,
            x_copies,
            y_copies,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn y0(&self) -> f64 {
        self.y0
    }

    pub fn num_copies(&self) -> usize {
        self.y_copies.len()
    }

    /// Copy `k`, zero based (`k < d(d+1)`).
    pub fn x_copy(&self, k: usize) -> &[f64] {
        let p = self.dim();
        &self.x_copies[k * p..(k + 1) * p]
    }

    pub fn y_copy(&self, k: usize) -> f64 {
        self.y_copies[k]
    }

    pub fn y_copies(&self) -> &[f64] {
        &self.y_copies
    }
}

/// Projects `x` onto the unit ball and clamps `y` to `[-1, 1]`.
pub fn clip_record(x: &[f64], y: f64) -> Result<(Vec<f64>, f64)> {
    if !x.iter().all(|v| v.is_finite()) || !y.is_finite() {
        return Err(Error::NonFinite {
            what: "record".into(),
        });
    }
    let n = norm(x);
    let x = if n > 1.0 {
        x.iter().map(|v| v / n).collect()
    } else {
        x.to_vec()
    };
    Ok((x, y.clamp(-1.0, 1.0)))
}

/// The substream for `player_id` under `master_seed`.
///
/// ChaCha keyed by the master seed with the player id as stream number; the
/// draws inside one report are consumed in a fixed order (head `x`, head
/// `y`, then `x`, `y` of copy 1, 2, ...), so a report is a pure function of
/// `(record, plan, d, master_seed, player_id)`.
pub fn player_stream(master_seed: u64, player_id: u64) -> StreamRng {
    let mut rng = StreamRng::seed_from_u64(master_seed);
    rng.set_stream(player_id);
    rng
}

/// Builds the player's report. Intended to be called once per player.
pub fn randomize_player<R: Rng + ?Sized>(
    x: &[f64],
    y: f64,
    plan: &NoisePlan,
    d: usize,
    player_id: u64,
    rng: &mut R,
) -> Result<PlayerReport> {
    check_record(x, y)?;
    if d == 0 || x.is_empty() {
        return Err(Error::domain("need d >= 1 and a non-empty record"));
    }
    let head_sd = sqrt(plan.head_var);
    let copy_sd = sqrt(plan.copy_var);
    let noisy = |v: f64, sd: f64, rng: &mut R| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        v + sd * z
    };
    let x0: Vec<f64> = x.iter().map(|&v| noisy(v, head_sd, rng)).collect();
    let y0 = noisy(y, head_sd, rng);
    let m = num_copies(d);
    let mut x_copies = Vec::with_capacity(m * x.len());
    let mut y_copies = Vec::with_capacity(m);
    for _ in 0..m {
        for &v in x {
            x_copies.push(noisy(v, copy_sd, rng));
        }
        y_copies.push(noisy(y, copy_sd, rng));
    }
    PlayerReport::new(player_id, d, x0, y0, x_copies, y_copies)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn faithful_mode_variances() {
        let b = PrivacyBudget::new(1.0, 1e-5, AccountingMode::PaperFaithful).unwrap();
        let plan = plan_noise(&b, 2).unwrap();
        // 32 ln(1.25e5) = 375.5542...
        let l = libm::log(1.25e5);
        assert!(close(plan.head_var, 32.0 * l, 1e-9));
        assert!(close(plan.head_var, 375.5542, 1e-3));
        // 8 ln(1.25e5) * 4 * 9 = 3379.988...
        assert!(close(plan.copy_var, 8.0 * l * 36.0, 1e-9));
        assert!(close(plan.composed_epsilon, 3.0, 1e-12));
        assert!(close(plan.composed_delta, 14.0 * 1e-5, 1e-18));
    }

    #[test]
    fn faithful_mode_composes_to_three_epsilon_for_any_degree() {
        for d in 1..=6 {
            for &eps in &[0.25, 1.0, 4.0] {
                let b = PrivacyBudget::new(eps, 1e-6, AccountingMode::PaperFaithful).unwrap();
                let plan = plan_noise(&b, d).unwrap();
                assert!(close(plan.composed_epsilon, 3.0 * eps, 1e-12 * eps.max(1.0)));
                assert!(close(plan.head_epsilon(), eps / 2.0, 1e-12));
                assert!(close(plan.copy_epsilon(), eps / num_copies(d) as f64, 1e-12));
            }
        }
    }

    #[test]
    fn calibrated_mode_is_exact() {
        for d in 1..=8 {
            for &(eps, delta) in &[(0.5, 1e-5), (1.0, 1e-5), (4.0, 1e-7), (10.0, 0.01)] {
                let b = PrivacyBudget::new(eps, delta, AccountingMode::Calibrated).unwrap();
                let plan = plan_noise(&b, d).unwrap();
                assert!(close(plan.composed_epsilon, eps, 1e-12), "{plan:?}");
                assert!(close(plan.composed_delta, delta, 1e-12));
                assert_eq!(plan.head_var, plan.copy_var);
            }
        }
    }

    #[test]
    fn large_release_epsilon_is_flagged() {
        let b = PrivacyBudget::new(4.0, 1e-5, AccountingMode::PaperFaithful).unwrap();
        assert!(plan_noise(&b, 1).unwrap().large_release_epsilon);
        let b = PrivacyBudget::new(1.0, 1e-5, AccountingMode::PaperFaithful).unwrap();
        assert!(!plan_noise(&b, 2).unwrap().large_release_epsilon);
    }

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::new(0.0, 1e-5, AccountingMode::Calibrated).is_err());
        assert!(PrivacyBudget::new(1.0, 0.0, AccountingMode::Calibrated).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0, AccountingMode::Calibrated).is_err());
        let b = PrivacyBudget::new(1.0, 0.1, AccountingMode::Calibrated).unwrap();
        assert!(plan_noise(&b, 0).is_err());
    }

    #[test]
    fn clip_examples() {
        let (x, y) = clip_record(&[0.3, 0.4], 0.2).unwrap();
        assert_eq!((x, y), (alloc::vec![0.3, 0.4], 0.2));
        let (x, _) = clip_record(&[1.2, 1.6], 0.0).unwrap();
        assert!(close(x[0], 0.6, 1e-15) && close(x[1], 0.8, 1e-15));
        assert_eq!(clip_record(&[0.0], 1.5).unwrap().1, 1.0);
        assert!(clip_record(&[f64::NAN], 0.0).is_err());
    }

    #[test]
    fn zero_noise_reproduces_record() {
        let x = [0.1, -0.2, 0.3];
        let mut rng = player_stream(1, 2);
        let r = randomize_player(&x, -0.7, &NoisePlan::zero_noise(), 3, 2, &mut rng).unwrap();
        assert_eq!(r.x0(), &x);
        assert_eq!(r.y0(), -0.7);
        assert_eq!(r.num_copies(), 12);
        for k in 0..12 {
            assert_eq!(r.x_copy(k), &x);
            assert_eq!(r.y_copy(k), -0.7);
        }
    }

    #[test]
    fn reports_are_replayable() {
        let b = PrivacyBudget::new(1.0, 1e-5, AccountingMode::Calibrated).unwrap();
        let plan = plan_noise(&b, 2).unwrap();
        let x = [0.5, 0.5];
        let a = randomize_player(&x, 1.0, &plan, 2, 7, &mut player_stream(3, 7)).unwrap();
        let b2 = randomize_player(&x, 1.0, &plan, 2, 7, &mut player_stream(3, 7)).unwrap();
        assert_eq!(a, b2);
        let c = randomize_player(&x, 1.0, &plan, 2, 8, &mut player_stream(3, 8)).unwrap();
        assert_ne!(a.x0(), c.x0());
    }

    #[test]
    fn norm_violation_is_rejected() {
        let plan = NoisePlan::zero_noise();
        let err = randomize_player(&[1.0, 1.0], 0.0, &plan, 1, 0, &mut player_stream(0, 0));
        assert!(matches!(err, Err(Error::NormViolation(_))));
    }

    #[test]
    fn report_shape_is_checked() {
        assert!(PlayerReport::new(0, 2, alloc::vec![0.0], 0.0, alloc::vec![0.0; 6], alloc::vec![0.0; 5]).is_err());
        assert!(PlayerReport::new(0, 2, alloc::vec![0.0], 0.0, alloc::vec![0.0; 5], alloc::vec![0.0; 6]).is_err());
        assert!(PlayerReport::new(0, 2, alloc::vec![f64::NAN], 0.0, alloc::vec![0.0; 6], alloc::vec![0.0; 6]).is_err());
        assert!(PlayerReport::new(0, 2, alloc::vec![0.0], 0.0, alloc::vec![0.0; 6], alloc::vec![0.0; 6]).is_ok());
    }
}
