use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use ldperm::config::{parse_key_values, ExperimentConfig};
use ldperm::core::approx::{build_derivative_poly_with, DerivativeKind, SmoothingParams, DEFAULT_GRID_STEP};
use ldperm::core::baseline::baseline_optimum;
use ldperm::core::data::{generate_synthetic, SyntheticKind};
use ldperm::core::losses::{eval_empirical_risk, GenLinLoss};
use ldperm::core::privacy::{plan_noise, AccountingMode, PrivacyBudget};
use ldperm::experiment::{
    build_route, clip_dataset, median, prepare_dataset, randomize_all, run_experiment,
    train_on_reports, OneShotReader,
};
use ldperm::io::{load_dataset, read_reports, read_results, save_dataset, write_reports, write_results, ResultRow};

#[derive(Parser)]
#[command(name = "ldperm", version, about = "Noninteractive locally private ERM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV (y first, then x).
    Generate {
        #[arg(long, default_value = "separable_svm")]
        kind: SyntheticKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 0.0)]
        margin: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce every player's single noisy report.
    Randomize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        #[arg(long)]
        degree: usize,
        #[arg(long, default_value = "calibrated")]
        mode: AccountingMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the nonprivate problem over the unit ball.
    Baseline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        loss: String,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Run a configured experiment over its seeds.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Derive the degree from alpha.
        #[arg(long)]
        theory: bool,
        /// Train on stored reports instead of randomizing.
        #[arg(long)]
        reports: Option<PathBuf>,
        /// Results CSV; defaults to out_dir/results.csv or stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure how well a degree-d polynomial fits a smoothed derivative.
    ApproxCheck {
        #[arg(long)]
        kind: DerivativeKind,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        degree: usize,
        #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
        grid_step: f64,
        #[arg(long)]
        header: bool,
    },
    /// Summarize results files by setting.
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            kind,
            n,
            p,
            margin,
            seed,
            out,
        } => {
            let data = generate_synthetic(kind, n, p, margin, seed).map_err(|e| anyhow!("{e}"))?;
            save_dataset(&data, &out)?;
            eprintln!("wrote {} records of dimension {p} to {}", n, out.display());
        }
        Command::Randomize {
            input,
            epsilon,
            delta,
            degree,
            mode,
            seed,
            out,
        } => {
            let data = load_dataset(&input, true)?;
            let budget = PrivacyBudget::new(epsilon, delta, mode).map_err(|e| anyhow!("{e}"))?;
            let plan = plan_noise(&budget, degree).map_err(|e| anyhow!("{e}"))?;
            if plan.large_release_epsilon {
                eprintln!("warning: a single release spends epsilon >= 1; the Gaussian calibration assumes less");
            }
            let reader = OneShotReader::new(&data);
            let reports = randomize_all(&reader, &plan, degree, seed)?;
            reader.seal();
            let f = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_reports(&reports, f)?;
            eprintln!(
                "wrote {} reports; head_var={} copy_var={} composed epsilon={} delta={}",
                reports.len(),
                plan.head_var,
                plan.copy_var,
                plan.composed_epsilon,
                plan.composed_delta
            );
        }
        Command::Baseline { input, loss, tol } => {
            let data = load_dataset(&input, true)?;
            let loss = GenLinLoss::from_name(&loss).map_err(|e| anyhow!("{e}"))?;
            let b = baseline_optimum(&loss, &data, tol).map_err(|e| anyhow!("{e}"))?;
            if !b.converged {
                eprintln!("warning: iteration ceiling reached before the stopping rule fired");
            }
            println!("loss,value,iterations,converged,w");
            let w: Vec<String> = b.w.iter().map(f64::to_string).collect();
            println!("{},{},{},{},{}", loss.name(), b.value, b.iterations, b.converged, w.join(" "));
        }
        Command::Train {
            config,
            theory,
            reports,
            out,
        } => train(config, theory, reports, out)?,
        Command::ApproxCheck {
            kind,
            beta,
            degree,
            grid_step,
            header,
        } => {
            let params = SmoothingParams::with_degree(beta, degree).map_err(|e| anyhow!("{e}"))?;
            let approx = build_derivative_poly_with(kind, &params, usize::MAX, grid_step).map_err(|e| anyhow!("{e}"))?;
            if header {
                println!("kind,beta,degree,sup_error,mean_error");
            }
            println!(
                "{},{},{},{},{}",
                kind.name(),
                beta,
                degree,
                approx.sup_error,
                approx.mean_error
            );
        }
        Command::Report { results } => report(&results)?,
    }
    Ok(())
}

fn train(config: PathBuf, theory: bool, reports: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = if theory {
        let mut map = parse_key_values(&text)?;
        map.insert("theory".into(), "true".into());
        ExperimentConfig::from_map(&map)?
    } else {
        ExperimentConfig::from_map(&parse_key_values(&text)?)?
    };

    let rows: Vec<ResultRow> = match reports {
        None => {
            let result = run_experiment(&cfg)?;
            eprintln!(
                "{} d={} beta={} sup_error={:.3e} composed_epsilon={} baseline={} median_excess={}",
                result.loss,
                result.degree,
                result.beta,
                result.sup_error,
                result.plan.composed_epsilon,
                result.baseline.value,
                result.median_excess_risk()
            );
            for run in &result.runs {
                if !run.audit.noninteractive() {
                    bail!("seed {}: audit failed\n{}", run.seed, run.audit.render());
                }
            }
            result.rows()
        }
        Some(path) => {
            let reports = read_reports(BufReader::new(
                File::open(&path).with_context(|| format!("opening {}", path.display()))?,
            ))?;
            let data = clip_dataset(&prepare_dataset(&cfg)?)?;
            if reports.len() != data.len() {
                bail!("{} reports for {} records", reports.len(), data.len());
            }
            let (route, approx) = build_route(&cfg)?;
            if reports[0].degree() != approx.poly.degree() {
                bail!(
                    "reports were made for degree {}, config asks for {}",
                    reports[0].degree(),
                    approx.poly.degree()
                );
            }
            let baseline = baseline_optimum(&cfg.loss, &data, cfg.baseline_tol).map_err(|e| anyhow!("{e}"))?;
            let mut rows = Vec::new();
            for &seed in &cfg.seeds {
                let start = Instant::now();
                let (w, _, trace) = train_on_reports(&cfg, &route, &approx, &reports, seed)?;
                let value = eval_empirical_risk(&cfg.loss, &w, &data).map_err(|e| anyhow!("{e}"))?;
                if let Some(dir) = &cfg.out_dir {
                    std::fs::create_dir_all(dir)?;
                    let f = File::create(dir.join(format!("trace_seed{seed}.csv")))?;
                    ldperm::io::write_trace(&trace, BufWriter::new(f))?;
                }
                rows.push(ResultRow {
                    loss: cfg.loss.name().into(),
                    epsilon: cfg.privacy.epsilon(),
                    delta: cfg.privacy.delta(),
                    degree: approx.poly.degree(),
                    n: data.len(),
                    p: data.dim(),
                    seed,
                    excess_risk: value - baseline.value,
                    baseline_value: baseline.value,
                    wall_ms: start.elapsed().as_millis() as u64,
                });
            }
            rows
        }
    };

    match out {
        Some(path) => write_results(&rows, File::create(&path).with_context(|| format!("creating {}", path.display()))?)?,
        None if cfg.out_dir.is_some() => {
            // run_experiment already wrote results.csv; rewrite for the reports path
            let dir = cfg.out_dir.as_ref().expect("checked");
            write_results(&rows, File::create(dir.join("results.csv"))?)?;
        }
        None => write_results(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn report(paths: &[PathBuf]) -> Result<()> {
    type Key = (String, String, String, usize, usize, usize);
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for path in paths {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        for row in read_results(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))? {
            let key = (
                row.loss.clone(),
                row.epsilon.to_string(),
                row.delta.to_string(),
                row.degree,
                row.n,
                row.p,
            );
            groups.entry(key).or_default().push(row.excess_risk);
        }
    }
    let mut out = io::stdout().lock();
    writeln!(out, "loss,epsilon,delta,degree,n,p,seeds,median_excess,mean_excess,min_excess,max_excess")?;
    for ((loss, eps, delta, d, n, p), v) in groups {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        writeln!(
            out,
            "{loss},{eps},{delta},{d},{n},{p},{},{},{mean},{min},{max}",
            v.len(),
            median(&v)
        )?;
    }
    Ok(())
}
