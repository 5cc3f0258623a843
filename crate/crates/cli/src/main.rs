use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use esn_discrim::data::read_observations;
use esn_discrim::em::{fit, FitOptions};
use esn_discrim::sim::{emit_report, run_study, RunOptions};
use esn_discrim::{Classifier, Priors, ReportFormat, RuleKind, SimConfig, Theta, ThetaRecord};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "esn-discrim",
    version,
    about = "ESN discriminant analysis and Monte Carlo harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo study and write its report.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "json")]
        format: ReportFormat,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long = "train-n")]
        train_n: Option<usize>,
        #[arg(long)]
        rule: Option<RuleKind>,
        #[arg(long)]
        workers: Option<usize>,
        /// Include elapsed wall time in the report.
        #[arg(long)]
        timing: bool,
    },
    /// Fit the two-group model to a `group,y1..yd` CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "max-iter", default_value_t = FitOptions::default().max_iter)]
        max_iter: usize,
        #[arg(long, default_value_t = FitOptions::default().tol)]
        tol: f64,
    },
    /// Label observations with a fitted model; writes CSV to stdout or `--out`.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "0.5,0.5")]
        priors: String,
        #[arg(long, default_value = "esn_linear")]
        rule: RuleKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Model file written by `fit` and read by `classify`.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    theta: ThetaRecord,
    loglik: f64,
    iterations: usize,
    converged: bool,
    n: [usize; 2],
}

fn parse_priors(s: &str) -> Result<Priors> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        bail!("priors must be 'p1,p2', got '{s}'");
    }
    let p1: f64 = parts[0]
        .parse()
        .with_context(|| format!("bad prior '{}'", parts[0]))?;
    let p2: f64 = parts[1]
        .parse()
        .with_context(|| format!("bad prior '{}'", parts[1]))?;
    Ok(Priors::new(p1, p2)?)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            format,
            seed,
            replications,
            train_n,
            rule,
            workers,
            timing,
        } => {
            let mut cfg = SimConfig::load(&config)?;
            cfg.seed = seed;
            if let Some(b) = replications {
                cfg.replications = b;
            }
            if let Some(n) = train_n {
                cfg.train_n = n;
            }
            if let Some(r) = rule {
                cfg.rule_kind = r;
            }
            cfg.validate()?;
            let report = run_study(&cfg, RunOptions { workers, timing })?;
            emit_report(&report, format, &out)?;
            eprintln!(
                "{} replications, overall accuracy {:.4}",
                report.replications.len(),
                report.confusion.overall_accuracy()
            );
        }
        Command::Fit {
            data,
            tau,
            out,
            max_iter,
            tol,
        } => {
            let obs = read_observations(&data)?;
            let train = obs
                .training_data()
                .with_context(|| format!("reading {}", data.display()))?;
            let res = fit(&train, tau, FitOptions { max_iter, tol })?;
            let model = ModelFile {
                theta: ThetaRecord::from(&res.theta),
                loglik: res.loglik(),
                iterations: res.iterations,
                converged: res.converged,
                n: [train.n(0), train.n(1)],
            };
            fs::write(&out, serde_json::to_string_pretty(&model)?)
                .with_context(|| format!("writing {}", out.display()))?;
            if !res.converged {
                eprintln!(
                    "warning: EM stopped after {} iterations without converging",
                    res.iterations
                );
            }
        }
        Command::Classify {
            model,
            data,
            priors,
            rule,
            out,
        } => {
            let text = fs::read_to_string(&model)
                .with_context(|| format!("reading {}", model.display()))?;
            let file: ModelFile = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", model.display()))?;
            let theta = Theta::try_from(&file.theta)?;
            let gp = theta.group_pair(parse_priors(&priors)?)?;
            let classifier = Classifier::build(&gp, rule)?;
            let obs = read_observations(&data)?;
            if obs.dim() != theta.dim() {
                bail!(
                    "data has {} coordinates, model has {}",
                    obs.dim(),
                    theta.dim()
                );
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["row", "label", "posterior1", "posterior2"])?;
            for (i, row) in obs.rows.row_iter().enumerate() {
                let y = row.transpose();
                let label = classifier.classify(&y)?;
                let (p1, p2) = gp.posterior(&y)?;
                w.write_record([
                    (i + 1).to_string(),
                    label.as_u8().to_string(),
                    p1.to_string(),
                    p2.to_string(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| anyhow::anyhow!(e.to_string()))?;
            write_out(out.as_deref(), &String::from_utf8(bytes)?)?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
