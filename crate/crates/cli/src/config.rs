//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ldperm_core::approx::{SmoothingParams, DEFAULT_DEGREE_CEILING};
use ldperm_core::data::SyntheticKind;
use ldperm_core::losses::GenLinLoss;
use ldperm_core::privacy::{AccountingMode, PrivacyBudget};
use ldperm_core::solver::{Averaging, StepRule};

pub const DEFAULT_DELTA: f64 = 1e-5;
pub const DEFAULT_BETA: f64 = 0.25;
pub const DEFAULT_BASELINE_TOL: f64 = 1e-6;
pub const DEFAULT_EPSILON_SWEEP: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

pub const KNOWN_KEYS: &[&str] = &[
    "loss",
    "n",
    "p",
    "epsilon",
    "delta",
    "degree",
    "alpha",
    "beta",
    "theory",
    "mode",
    "zero_noise",
    "seeds",
    "dataset",
    "generator",
    "margin",
    "data_seed",
    "out_dir",
    "pipeline",
    "iterations",
    "step_rule",
    "step_scale",
    "averaging",
    "pilot_samples",
    "baseline_tol",
    "degree_ceiling",
];

/// Every problem found while reading a config, not just the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem(s)):", self.problems.len())?;
        for p in &self.problems {
            writeln!(f, "  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Splits `key = value` lines. `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    let mut problems = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            problems.push(format!("line {}: expected key = value, got {line:?}", lineno + 1));
            continue;
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !KNOWN_KEYS.contains(&k.as_str()) {
            problems.push(format!("line {}: unknown key {k:?}", lineno + 1));
        } else if map.insert(k.clone(), v).is_some() {
            problems.push(format!("line {}: duplicate key {k:?}", lineno + 1));
        }
    }
    if problems.is_empty() {
        Ok(map)
    } else {
        Err(ConfigError { problems })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Privacy {
    Budget { epsilon: f64, delta: f64, mode: AccountingMode },
    /// Test-only: no noise at all.
    ZeroNoise,
}

impl Privacy {
    pub fn budget(&self) -> Option<PrivacyBudget> {
        match *self {
            Privacy::Budget { epsilon, delta, mode } => PrivacyBudget::new(epsilon, delta, mode).ok(),
            Privacy::ZeroNoise => None,
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            Privacy::Budget { epsilon, .. } => *epsilon,
            Privacy::ZeroNoise => f64::INFINITY,
        }
    }

    pub fn delta(&self) -> f64 {
        match self {
            Privacy::Budget { delta, .. } => *delta,
            Privacy::ZeroNoise => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic { kind: SyntheticKind, margin: f64, seed: u64 },
}

/// Which server-side reconstruction to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    /// Direct for hinge and plus, kink decomposition for the rest.
    Auto,
    Direct,
    GenLin,
    /// Absolute value through `|t| = 2 max(0, t) - t`.
    PlusReduction,
}

impl FromStr for Pipeline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Pipeline::Auto),
            "direct" => Ok(Pipeline::Direct),
            "genlin" => Ok(Pipeline::GenLin),
            "plus_reduction" => Ok(Pipeline::PlusReduction),
            other => Err(format!(
                "unknown pipeline {other:?} (expected auto, direct, genlin or plus_reduction)"
            )),
        }
    }
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::Auto => "auto",
            Pipeline::Direct => "direct",
            Pipeline::GenLin => "genlin",
            Pipeline::PlusReduction => "plus_reduction",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub loss: GenLinLoss,
    /// Required for synthetic data; checked against the file otherwise.
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub privacy: Privacy,
    pub smoothing: SmoothingParams,
    pub seeds: Vec<u64>,
    pub dataset: DataSource,
    pub out_dir: Option<PathBuf>,
    pub pipeline: Pipeline,
    /// Defaults to the number of players.
    pub iterations: Option<usize>,
    pub step_rule: StepRule,
    pub step_scale: f64,
    pub averaging: Averaging,
    pub pilot_samples: usize,
    pub baseline_tol: f64,
    pub degree_ceiling: usize,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
        Ok(text.parse()?)
    }

    pub fn degree(&self) -> usize {
        self.smoothing.degree()
    }

    pub fn beta(&self) -> f64 {
        self.smoothing.beta()
    }

    /// The same experiment with different settings for the given keys.
    pub fn with_overrides(text: &str, overrides: &[(&str, String)]) -> Result<Self, ConfigError> {
        let mut map = parse_key_values(text)?;
        for (k, v) in overrides {
            map.insert((*k).to_string(), v.clone());
        }
        Self::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut problems = Vec::new();
        let mut parsed = Fields {
            map,
            problems: &mut problems,
        };

        let loss = match map.get("loss") {
            None => {
                parsed.problems.push("loss: missing (one of hinge, plus, abs, logistic)".into());
                None
            }
            Some(name) => match GenLinLoss::from_name(name) {
                Ok(l) => Some(l),
                Err(_) => {
                    parsed.problems.push(format!(
                        "loss: unknown loss {name:?} (expected one of {})",
                        GenLinLoss::CATALOG.join(", ")
                    ));
                    None
                }
            },
        };

        let n: Option<usize> = parsed.get("n");
        let p: Option<usize> = parsed.get("p");
        if n == Some(0) {
            parsed.problems.push("n: must be >= 1".into());
        }
        if p == Some(0) {
            parsed.problems.push("p: must be >= 1".into());
        }

        let epsilon: Option<f64> = parsed.get("epsilon");
        let delta: Option<f64> = parsed.get("delta");
        let mode: Option<AccountingMode> = parsed.get("mode");
        let zero_noise: bool = parsed.get("zero_noise").unwrap_or(false);
        let privacy = if zero_noise {
            for key in ["epsilon", "delta", "mode"] {
                if map.contains_key(key) {
                    parsed
                        .problems
                        .push(format!("{key}: not allowed together with zero_noise = true"));
                }
            }
            Some(Privacy::ZeroNoise)
        } else {
            let mut ok = true;
            match epsilon {
                None if !map.contains_key("epsilon") => {
                    parsed.problems.push("epsilon: missing (or set zero_noise = true)".into());
                    ok = false;
                }
                Some(e) if !(e > 0.0 && e.is_finite()) => {
                    parsed.problems.push(format!("epsilon: must be positive and finite, got {e}"));
                    ok = false;
                }
                None => ok = false,
                _ => {}
            }
            let delta_value = delta.unwrap_or(DEFAULT_DELTA);
            if !(delta_value > 0.0 && delta_value < 1.0) {
                parsed.problems.push(format!("delta: must lie in (0, 1), got {delta_value}"));
                ok = false;
            }
            if map.contains_key("delta") && delta.is_none() {
                ok = false;
            }
            if map.contains_key("mode") && mode.is_none() {
                ok = false;
            }
            ok.then(|| Privacy::Budget {
                epsilon: epsilon.unwrap_or(f64::NAN),
                delta: delta_value,
                mode: mode.unwrap_or(AccountingMode::Calibrated),
            })
        };

        let theory: bool = parsed.get("theory").unwrap_or(false);
        let degree: Option<usize> = parsed.get("degree");
        let alpha: Option<f64> = parsed.get("alpha");
        let beta: Option<f64> = parsed.get("beta");
        let degree_ceiling: usize = parsed.get("degree_ceiling").unwrap_or(DEFAULT_DEGREE_CEILING);
        let smoothing = if theory {
            if degree.is_some() {
                parsed.problems.push("degree: not allowed with theory = true (it is derived from alpha)".into());
            }
            if beta.is_some() {
                parsed.problems.push("beta: not allowed with theory = true (it is alpha / 4)".into());
            }
            match alpha {
                None => {
                    if !map.contains_key("alpha") {
                        parsed.problems.push("alpha: required when theory = true".into());
                    }
                    None
                }
                Some(a) => match SmoothingParams::from_alpha(a, None) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        parsed.problems.push(format!("alpha: {e}"));
                        None
                    }
                },
            }
        } else {
            match degree {
                None => {
                    if !map.contains_key("degree") {
                        parsed.problems.push("degree: missing (or set theory = true with alpha)".into());
                    }
                    None
                }
                Some(0) => {
                    parsed.problems.push("degree: must be >= 1".into());
                    None
                }
                Some(d) => {
                    let b = beta.or(alpha.map(|a| a / 4.0)).unwrap_or(DEFAULT_BETA);
                    match SmoothingParams::with_degree(b, d) {
                        Ok(s) => Some(s),
                        Err(e) => {
                            let key = if beta.is_some() { "beta" } else { "alpha" };
                            parsed.problems.push(format!("{key}: {e}"));
                            None
                        }
                    }
                }
            }
        };
        if let Some(s) = &smoothing {
            if s.degree() > degree_ceiling {
                parsed.problems.push(format!(
                    "degree: {} exceeds degree_ceiling {degree_ceiling}",
                    s.degree()
                ));
            }
        }

        let seeds = match map.get("seeds") {
            None => Some(vec![0]),
            Some(text) => {
                let list: Result<Vec<u64>, _> = text
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect();
                match list {
                    Ok(v) if !v.is_empty() => Some(v),
                    _ => {
                        parsed.problems.push(format!(
                            "seeds: expected a comma separated list of integers, got {text:?}"
                        ));
                        None
                    }
                }
            }
        };

        let generator: Option<SyntheticKind> = parsed.get("generator");
        let margin: f64 = parsed.get("margin").unwrap_or(0.0);
        if !(0.0..0.5).contains(&margin) {
            parsed.problems.push(format!("margin: must lie in [0, 0.5), got {margin}"));
        }
        let data_seed: u64 = parsed.get("data_seed").unwrap_or(0);
        let dataset = match map.get("dataset") {
            Some(path) => {
                if map.contains_key("generator") {
                    parsed.problems.push("generator: not allowed together with dataset".into());
                }
                Some(DataSource::Csv(PathBuf::from(path)))
            }
            None => {
                if n.is_none() && !map.contains_key("n") {
                    parsed.problems.push("n: required for synthetic data".into());
                }
                if p.is_none() && !map.contains_key("p") {
                    parsed.problems.push("p: required for synthetic data".into());
                }
                Some(DataSource::Synthetic {
                    kind: generator.unwrap_or(SyntheticKind::SeparableSvm),
                    margin,
                    seed: data_seed,
                })
            }
        };

        let out_dir = map.get("out_dir").map(PathBuf::from);
        let pipeline: Pipeline = parsed.get("pipeline").unwrap_or(Pipeline::Auto);
        if let Some(l) = &loss {
            let name = l.name();
            match pipeline {
                Pipeline::Direct if !matches!(name, "hinge" | "plus") => parsed
                    .problems
                    .push(format!("pipeline: direct only supports hinge and plus, not {name}")),
                Pipeline::PlusReduction if name != "abs" => parsed
                    .problems
                    .push(format!("pipeline: plus_reduction only supports abs, not {name}")),
                _ => {}
            }
        }

        let iterations: Option<usize> = parsed.get("iterations");
        if iterations == Some(0) {
            parsed.problems.push("iterations: must be >= 1".into());
        }
        let step_rule = match map.get("step_rule").map(String::as_str) {
            None | Some("inv_sqrt") => Some(StepRule::InvSqrt),
            Some("fixed") => Some(StepRule::Fixed),
            Some(other) => {
                parsed
                    .problems
                    .push(format!("step_rule: expected inv_sqrt or fixed, got {other:?}"));
                None
            }
        };
        let step_scale: f64 = parsed.get("step_scale").unwrap_or(1.0);
        if !(step_scale > 0.0 && step_scale.is_finite()) {
            parsed.problems.push(format!("step_scale: must be positive, got {step_scale}"));
        }
        let averaging = match map.get("averaging").map(String::as_str) {
            None | Some("uniform_tail") => Some(Averaging::UniformTail),
            Some("last") => Some(Averaging::Last),
            Some(other) => {
                parsed
                    .problems
                    .push(format!("averaging: expected uniform_tail or last, got {other:?}"));
                None
            }
        };
        let pilot_samples: usize = parsed.get("pilot_samples").unwrap_or(ldperm_core::oracle::PILOT_SAMPLES);
        if pilot_samples < 2 {
            parsed.problems.push("pilot_samples: must be >= 2".into());
        }
        let baseline_tol: f64 = parsed.get("baseline_tol").unwrap_or(DEFAULT_BASELINE_TOL);
        if !(baseline_tol > 0.0) {
            parsed.problems.push(format!("baseline_tol: must be positive, got {baseline_tol}"));
        }

        if !problems.is_empty() {
            return Err(ConfigError { problems });
        }
        Ok(ExperimentConfig {
            loss: loss.expect("checked"),
            n,
            p,
            privacy: privacy.expect("checked"),
            smoothing: smoothing.expect("checked"),
            seeds: seeds.expect("checked"),
            dataset: dataset.expect("checked"),
            out_dir,
            pipeline,
            iterations,
            step_rule: step_rule.expect("checked"),
            step_scale,
            averaging: averaging.expect("checked"),
            pilot_samples,
            baseline_tol,
            degree_ceiling,
        })
    }
}

impl FromStr for ExperimentConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        Self::from_map(&parse_key_values(text)?)
    }
}

struct Fields<'a> {
    map: &'a BTreeMap<String, String>,
    problems: &'a mut Vec<String>,
}

impl Fields<'_> {
    /// Parses `key` if present, recording a problem when it does not parse.
    fn get<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self.map.get(key)?;
        match raw.parse::<T>() {
            Ok(v) => Some(v),
            Err(e) => {
                self.problems.push(format!("{key}: cannot parse {raw:?}: {e}"));
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "\
        # hinge on synthetic data
        loss = hinge
        n = 100
        p = 3
        epsilon = 2
        degree = 4
        seeds = 1, 2,3
    ";

    #[test]
    fn parses_a_minimal_config_with_defaults() {
        let c: ExperimentConfig = BASE.parse().unwrap();
        assert_eq!(c.loss.name(), "hinge");
        assert_eq!(c.seeds, vec![1, 2, 3]);
        assert_eq!(c.degree(), 4);
        assert_eq!(c.beta(), DEFAULT_BETA);
        assert_eq!(
            c.privacy,
            Privacy::Budget {
                epsilon: 2.0,
                delta: DEFAULT_DELTA,
                mode: AccountingMode::Calibrated
            }
        );
        assert_eq!(
            c.dataset,
            DataSource::Synthetic {
                kind: SyntheticKind::SeparableSvm,
                margin: 0.0,
                seed: 0
            }
        );
        assert_eq!(c.pipeline, Pipeline::Auto);
    }

    #[test]
    fn theory_derives_degree_from_alpha() {
        let text = "loss = hinge\nn = 10\np = 2\nepsilon = 1\nalpha = 0.5\ntheory = true\n";
        let c: ExperimentConfig = text.parse().unwrap();
        assert_eq!(c.degree(), 256);
        assert_eq!(c.beta(), 0.125);
    }

    #[test]
    fn every_violated_field_is_reported() {
        let text = "loss = squared\nn = 0\np = x\nepsilon = -1\ndelta = 2\ndegree = 0\nmode = fancy\n\
                    seeds = a,b\nmargin = 0.7\nstep_rule = adagrad\n";
        let err = text.parse::<ExperimentConfig>().unwrap_err();
        for key in [
            "loss:", "n:", "p:", "epsilon:", "delta:", "degree:", "mode:", "seeds:", "margin:", "step_rule:",
        ] {
            assert!(
                err.problems.iter().any(|p| p.starts_with(key)),
                "{key} not reported in {err}"
            );
        }
    }

    #[test]
    fn zero_noise_conflicts_with_a_budget() {
        let text = "loss = hinge\nn = 10\np = 2\nzero_noise = true\nepsilon = 1\ndelta = 1e-5\ndegree = 2\n";
        let err = text.parse::<ExperimentConfig>().unwrap_err();
        assert_eq!(err.problems.len(), 2, "{err}");
        let ok = "loss = hinge\nn = 10\np = 2\nzero_noise = true\ndegree = 2\n";
        assert_eq!(ok.parse::<ExperimentConfig>().unwrap().privacy, Privacy::ZeroNoise);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let err = parse_key_values("loss = hinge\nlos = hinge\nloss = abs\nnonsense\n").unwrap_err();
        assert_eq!(err.problems.len(), 3, "{err}");
    }

    #[test]
    fn pipeline_must_fit_the_loss() {
        let text = format!("{BASE}\npipeline = plus_reduction\n");
        assert!(text.parse::<ExperimentConfig>().is_err());
        let abs = BASE.replace("hinge", "abs") + "pipeline = plus_reduction\n";
        assert_eq!(abs.parse::<ExperimentConfig>().unwrap().pipeline, Pipeline::PlusReduction);
    }

    #[test]
    fn degree_ceiling_applies() {
        let text = BASE.replace("degree = 4", "degree = 40") + "degree_ceiling = 32\n";
        assert!(text.parse::<ExperimentConfig>().is_err());
    }
}
