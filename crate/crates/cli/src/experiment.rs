//! End-to-end runs: clip, plan noise, randomize every player once, then
//! train on the reports and measure excess empirical risk.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rayon::prelude::*;

use ldperm_core::approx::{
    build_derivative_poly_with, DerivativeApprox, DerivativeKind, DEFAULT_GRID_STEP,
};
use ldperm_core::baseline::{baseline_optimum, Baseline};
use ldperm_core::data::{generate_synthetic, Dataset};
use ldperm_core::losses::{eval_empirical_risk, GenLinLoss};
use ldperm_core::oracle::{certify, Certificate, GradientRoute, ReportOracle};
use ldperm_core::privacy::{
    clip_record, plan_noise, player_stream, randomize_player, AccountingMode, NoisePlan, PlayerReport,
};
use ldperm_core::solver::{run_sigm, SolverConfig, Trace};
use ldperm_core::StreamRng;

use crate::config::{DataSource, ExperimentConfig, Pipeline, Privacy};
use crate::io::{load_dataset, write_results, write_trace, ResultRow};

const PILOT_TAG: u64 = 0x7069_6c6f_7400_0001;
const SOLVER_TAG: u64 = 0x736f_6c76_6572_0002;

/// SplitMix64 finalizer, used to derive independent seeds from one seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hands out each record at most once and refuses reads after `seal`.
pub struct OneShotReader<'a> {
    data: &'a Dataset,
    reads: Vec<AtomicU32>,
    sealed: AtomicBool,
    late_reads: AtomicU32,
}

impl<'a> OneShotReader<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        Self {
            data,
            reads: (0..data.len()).map(|_| AtomicU32::new(0)).collect(),
            sealed: AtomicBool::new(false),
            late_reads: AtomicU32::new(0),
        }
    }

    pub fn read(&self, i: usize) -> Result<(&'a [f64], f64)> {
        if self.sealed.load(Ordering::SeqCst) {
            self.late_reads.fetch_add(1, Ordering::SeqCst);
            bail!("player {i} read after the server started");
        }
        let before = self.reads[i].fetch_add(1, Ordering::SeqCst);
        if before > 0 {
            bail!("player {i} read twice");
        }
        Ok((self.data.x(i), self.data.y(i)))
    }

    pub fn seal(&self) {
        self.sealed.store(true, Ordering::SeqCst);
    }

    fn summary(&self) -> (usize, u32, u32) {
        let counts: Vec<u32> = self.reads.iter().map(|c| c.load(Ordering::SeqCst)).collect();
        let once = counts.iter().filter(|&&c| c == 1).count();
        let max = counts.iter().copied().max().unwrap_or(0);
        (once, max, self.late_reads.load(Ordering::SeqCst))
    }
}

/// What happened to the raw data during one replication.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditLog {
    pub players: usize,
    pub read_exactly_once: usize,
    pub max_reads: u32,
    pub reads_after_server_start: u32,
    pub reports_before_server_start: usize,
    pub server_iterations: usize,
    pub lines: Vec<String>,
}

impl AuditLog {
    /// True when every player was read exactly once and all reads happened
    /// before the first server iteration.
    pub fn noninteractive(&self) -> bool {
        self.read_exactly_once == self.players
            && self.max_reads == 1
            && self.reads_after_server_start == 0
            && self.reports_before_server_start == self.players
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            let _ = writeln!(s, "{l}");
        }
        let _ = writeln!(
            s,
            "verdict noninteractive={} players={} read_exactly_once={} max_reads={} reads_after_server_start={}",
            self.noninteractive(),
            self.players,
            self.read_exactly_once,
            self.max_reads,
            self.reads_after_server_start
        );
        s
    }
}

/// Loads or generates the records, clipped into the unit balls.
pub fn prepare_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let data = match &cfg.dataset {
        DataSource::Csv(path) => {
            let data = load_dataset(path, true)?;
            if let Some(n) = cfg.n {
                if n != data.len() {
                    bail!("config says n = {n} but {} has {} rows", path.display(), data.len());
                }
            }
            if let Some(p) = cfg.p {
                if p != data.dim() {
                    bail!("config says p = {p} but {} has {} features", path.display(), data.dim());
                }
            }
            data
        }
        DataSource::Synthetic { kind, margin, seed } => {
            let (n, p) = (cfg.n.unwrap_or(0), cfg.p.unwrap_or(0));
            generate_synthetic(*kind, n, p, *margin, *seed).map_err(|e| anyhow!("{e}"))?
        }
    };
    Ok(data)
}

/// Projects every record into the feasible region.
pub fn clip_dataset(data: &Dataset) -> Result<Dataset> {
    let mut xs = Vec::with_capacity(data.len() * data.dim());
    let mut ys = Vec::with_capacity(data.len());
    for (x, y) in data.records() {
        let (x, y) = clip_record(x, y).map_err(|e| anyhow!("{e}"))?;
        xs.extend(x);
        ys.push(y);
    }
    Ok(Dataset::new(xs, ys, data.dim())
        .map_err(|e| anyhow!("{e}"))?
        .with_provenance(data.provenance.clone()))
}

pub fn noise_plan(privacy: &Privacy, degree: usize) -> Result<NoisePlan> {
    match privacy {
        Privacy::ZeroNoise => Ok(NoisePlan::zero_noise()),
        Privacy::Budget { .. } => {
            let budget = privacy
                .budget()
                .ok_or_else(|| anyhow!("invalid privacy budget {privacy:?}"))?;
            plan_noise(&budget, degree).map_err(|e| anyhow!("{e}"))
        }
    }
}

/// The polynomial kind and gradient route used for a loss.
pub fn resolve_pipeline(loss: &GenLinLoss, pipeline: Pipeline) -> Result<(DerivativeKind, Pipeline)> {
    let name = loss.name();
    let resolved = match (pipeline, name) {
        (Pipeline::Auto, "hinge" | "plus") => Pipeline::Direct,
        (Pipeline::Auto, _) => Pipeline::GenLin,
        (Pipeline::Direct, "hinge" | "plus") => Pipeline::Direct,
        (Pipeline::PlusReduction, "abs") => Pipeline::PlusReduction,
        (Pipeline::GenLin, _) if !loss.is_affine() => Pipeline::GenLin,
        (p, _) => bail!("pipeline {} cannot train loss {name}", p.name()),
    };
    let kind = match (resolved, name) {
        (Pipeline::Direct, "hinge") => DerivativeKind::Hinge,
        _ => DerivativeKind::Plus,
    };
    Ok((kind, resolved))
}

pub fn build_route(cfg: &ExperimentConfig) -> Result<(GradientRoute, DerivativeApprox)> {
    let (kind, pipeline) = resolve_pipeline(&cfg.loss, cfg.pipeline)?;
    let approx = build_derivative_poly_with(kind, &cfg.smoothing, cfg.degree_ceiling, DEFAULT_GRID_STEP)
        .map_err(|e| anyhow!("{e}"))?;
    let poly = approx.poly.clone();
    let route = match pipeline {
        Pipeline::Direct => GradientRoute::Direct { poly },
        Pipeline::PlusReduction => GradientRoute::Reduction {
            poly,
            scale: 2.0,
            offset: -1.0,
        },
        _ => GradientRoute::GenLin { poly, loss: cfg.loss },
    };
    Ok((route, approx))
}

/// Randomizes every record exactly once, in parallel, with per-player
/// streams under `master_seed`.
pub fn randomize_all(
    reader: &OneShotReader<'_>,
    plan: &NoisePlan,
    degree: usize,
    master_seed: u64,
) -> Result<Vec<PlayerReport>> {
    (0..reader.data.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = reader.read(i)?;
            let id = i as u64;
            randomize_player(x, y, plan, degree, id, &mut player_stream(master_seed, id))
                .map_err(|e| anyhow!("player {i}: {e}"))
        })
        .collect()
}

/// Server side: certify on a pilot batch at `w = 0`, then run the solver.
pub fn train_on_reports(
    cfg: &ExperimentConfig,
    route: &GradientRoute,
    approx: &DerivativeApprox,
    reports: &[PlayerReport],
    seed: u64,
) -> Result<(Vec<f64>, Certificate, Trace)> {
    let mut oracle = ReportOracle::new(reports, route.clone()).map_err(|e| anyhow!("{e}"))?;
    let p = reports[0].dim();
    let mut pilot_rng = StreamRng::seed_from_u64(derive_seed(seed, PILOT_TAG));
    let pilot = oracle
        .pilot(&vec![0.0; p], cfg.pilot_samples, &mut pilot_rng)
        .map_err(|e| anyhow!("pilot batch: {e}"))?;
    let certificate = certify(approx.sup_error, approx.beta, &pilot);
    oracle.certificate = certificate;

    let mut solver = SolverConfig::new(cfg.iterations.unwrap_or(reports.len()), derive_seed(seed, SOLVER_TAG));
    solver.step_rule = cfg.step_rule;
    solver.step_scale = cfg.step_scale;
    solver.averaging = cfg.averaging;
    // a deterministic pilot has no spread; fall back to unit scale
    solver.sigma_hat = if certificate.sigma_bound > 0.0 {
        certificate.sigma_bound
    } else {
        1.0
    };
    let out = run_sigm(&mut oracle, &solver).map_err(|e| {
        anyhow!(
            "solver aborted at iteration {} after {} trace records: {}",
            e.iteration,
            e.trace.len(),
            e.error
        )
    })?;
    Ok((out.w, certificate, out.trace))
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub w: Vec<f64>,
    pub private_value: f64,
    pub excess_risk: f64,
    pub certificate: Certificate,
    pub trace: Trace,
    pub audit: AuditLog,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub loss: String,
    pub pipeline: Pipeline,
    pub epsilon: f64,
    pub delta: f64,
    pub mode: Option<AccountingMode>,
    pub degree: usize,
    pub beta: f64,
    pub sup_error: f64,
    pub n: usize,
    pub p: usize,
    pub plan: NoisePlan,
    pub baseline: Baseline,
    pub runs: Vec<SeedRun>,
}

impl ExperimentResult {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.runs
            .iter()
            .map(|r| ResultRow {
                loss: self.loss.clone(),
                epsilon: self.epsilon,
                delta: self.delta,
                degree: self.degree,
                n: self.n,
                p: self.p,
                seed: r.seed,
                excess_risk: r.excess_risk,
                baseline_value: self.baseline.value,
                wall_ms: r.wall_ms,
            })
            .collect()
    }

    pub fn excess_risks(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.excess_risk).collect()
    }

    pub fn median_excess_risk(&self) -> f64 {
        median(&self.excess_risks())
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// One replication: randomize once, seal the data, train, evaluate.
pub fn run_seed(
    cfg: &ExperimentConfig,
    data: &Dataset,
    plan: &NoisePlan,
    route: &GradientRoute,
    approx: &DerivativeApprox,
    baseline: &Baseline,
    seed: u64,
) -> Result<SeedRun> {
    let start = Instant::now();
    let degree = route.poly().degree();
    let reader = OneShotReader::new(data);
    let mut lines = vec![format!(
        "seed {seed}: randomize start players={} degree={degree} head_var={} copy_var={}",
        data.len(),
        plan.head_var,
        plan.copy_var
    )];
    let reports = randomize_all(&reader, plan, degree, seed)?;
    lines.push(format!("seed {seed}: randomize end reports={}", reports.len()));
    reader.seal();
    let reports_before = reports.len();
    lines.push(format!("seed {seed}: data sealed, server start"));

    let (w, certificate, trace) = train_on_reports(cfg, route, approx, &reports, seed)?;
    lines.push(format!(
        "seed {seed}: server end iterations={} gamma={} sigma_hat={}",
        trace.len(),
        certificate.gamma,
        certificate.sigma_bound
    ));
    let (once, max_reads, late) = reader.summary();

    let private_value = eval_empirical_risk(&cfg.loss, &w, data).map_err(|e| anyhow!("{e}"))?;
    Ok(SeedRun {
        seed,
        excess_risk: private_value - baseline.value,
        private_value,
        w,
        certificate,
        audit: AuditLog {
            players: data.len(),
            read_exactly_once: once,
            max_reads,
            reads_after_server_start: late,
            reports_before_server_start: reports_before,
            server_iterations: trace.len(),
            lines,
        },
        trace,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let data = clip_dataset(&prepare_dataset(cfg)?)?;
    run_experiment_on(cfg, &data)
}

pub fn run_experiment_on(cfg: &ExperimentConfig, data: &Dataset) -> Result<ExperimentResult> {
    let (route, approx) = build_route(cfg)?;
    let degree = approx.poly.degree();
    let plan = noise_plan(&cfg.privacy, degree)?;
    let baseline = baseline_optimum(&cfg.loss, data, cfg.baseline_tol).map_err(|e| anyhow!("{e}"))?;
    let runs = cfg
        .seeds
        .iter()
        .map(|&seed| run_seed(cfg, data, &plan, &route, &approx, &baseline, seed))
        .collect::<Result<Vec<_>>>()?;
    let (_, pipeline) = resolve_pipeline(&cfg.loss, cfg.pipeline)?;
    let result = ExperimentResult {
        loss: cfg.loss.name().to_string(),
        pipeline,
        epsilon: cfg.privacy.epsilon(),
        delta: cfg.privacy.delta(),
        mode: match cfg.privacy {
            Privacy::Budget { mode, .. } => Some(mode),
            Privacy::ZeroNoise => None,
        },
        degree,
        beta: approx.beta,
        sup_error: approx.sup_error,
        n: data.len(),
        p: data.dim(),
        plan,
        baseline,
        runs,
    };
    if let Some(dir) = &cfg.out_dir {
        persist(&result, dir)?;
    }
    Ok(result)
}

/// Writes `results.csv` plus a trace and an audit log per seed.
pub fn persist(result: &ExperimentResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let results = dir.join("results.csv");
    write_results(&result.rows(), BufWriter::new(File::create(&results)?))
        .with_context(|| format!("writing {}", results.display()))?;
    for run in &result.runs {
        let trace = dir.join(format!("trace_seed{}.csv", run.seed));
        write_trace(&run.trace, BufWriter::new(File::create(&trace)?))
            .with_context(|| format!("writing {}", trace.display()))?;
        std::fs::write(dir.join(format!("audit_seed{}.log", run.seed)), run.audit.render())?;
    }
    Ok(())
}
