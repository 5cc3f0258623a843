//! Monte Carlo study: simulate two ESN groups, fit by EM, classify fresh
//! test samples and summarize estimation error.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{Classifier, RuleKind};
use crate::em::{fit, matrix_from_rows, FitOptions, Theta, TrainingData};
use crate::error::{Error, Result};
use crate::ese::{Group, Priors};
use crate::esn::EsnParams;
use crate::numkit::{rng_stream, SpdFactor};

/// Attempts per replication before the study aborts.
pub const MAX_ATTEMPTS: usize = 4;

fn default_test_n() -> usize {
    500
}
fn default_train_n() -> usize {
    500
}
fn default_replications() -> usize {
    200
}
fn default_rule() -> RuleKind {
    RuleKind::EsnLinear
}
fn default_max_iter() -> usize {
    FitOptions::default().max_iter
}
fn default_tol() -> f64 {
    FitOptions::default().tol
}

/// Study configuration. `Sigma` and `eta` define the common latent-regression
/// dispersion `Σ` and the shape; the skewness vector is
/// `δ = Ση/√(1 + η⊤Ση)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<f64>>,
    pub eta: Vec<f64>,
    pub tau: f64,
    #[serde(default = "default_train_n")]
    pub train_n: usize,
    #[serde(default = "default_test_n")]
    pub test_n: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rule")]
    pub rule_kind: RuleKind,
    #[serde(default)]
    pub priors: Priors,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.into(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })
    }

    pub fn dim(&self) -> usize {
        self.xi1.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidArgument("xi1 must be non-empty".into()));
        }
        for len in [self.xi2.len(), self.eta.len(), self.sigma.len()] {
            if len != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: len,
                });
            }
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be >= 1".into()));
        }
        if self.train_n < d + 2 {
            return Err(Error::InvalidArgument(format!(
                "train_n must be >= {}",
                d + 2
            )));
        }
        if self.test_n == 0 {
            return Err(Error::InvalidArgument("test_n must be >= 1".into()));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidArgument(
                "tol must be positive and max_iter >= 1".into(),
            ));
        }
        Priors::new(self.priors.p1, self.priors.p2)?;
        let sigma = matrix_from_rows(&self.sigma)?;
        if let Err(e) = SpdFactor::new(&sigma) {
            let hint = if d == 2 && sigma[(0, 1)] * sigma[(0, 1)] > sigma[(0, 0)] * sigma[(1, 1)] {
                "; the off-diagonal exceeds the geometric mean of the diagonal \
                 (e.g. [[2.5,1.5],[1.5,0.8]] has determinant -0.25; [[2.5,0.8],[0.8,1.5]] is valid)"
            } else {
                ""
            };
            return Err(Error::InvalidArgument(format!(
                "Sigma is not positive definite: {e}{hint}"
            )));
        }
        self.truth()?;
        Ok(())
    }

    /// True parameter vector in estimation form.
    pub fn truth(&self) -> Result<Theta> {
        let sigma = matrix_from_rows(&self.sigma)?;
        let eta = DVector::from_column_slice(&self.eta);
        let s_eta = &sigma * &eta;
        let delta = &s_eta / (1.0 + eta.dot(&s_eta)).sqrt();
        let theta = Theta {
            xi1: DVector::from_column_slice(&self.xi1),
            xi2: DVector::from_column_slice(&self.xi2),
            sigma,
            delta,
            tau: self.tau,
        };
        theta.groups()?;
        Ok(theta)
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

/// Counts indexed `[allocated][original]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn record(&mut self, original: Group, allocated: Group) {
        self.counts[allocated.index()][original.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for a in 0..2 {
            for o in 0..2 {
                self.counts[a][o] += other.counts[a][o];
            }
        }
    }

    /// Observations originating from each group.
    pub fn original_totals(&self) -> [u64; 2] {
        [0, 1].map(|o| self.counts[0][o] + self.counts[1][o])
    }

    pub fn allocated_totals(&self) -> [u64; 2] {
        [0, 1].map(|a| self.counts[a][0] + self.counts[a][1])
    }

    pub fn total(&self) -> u64 {
        self.original_totals().iter().sum()
    }

    /// Fraction of each original group allocated correctly.
    pub fn group_accuracy(&self) -> [f64; 2] {
        let t = self.original_totals();
        [0, 1].map(|g| {
            if t[g] == 0 {
                f64::NAN
            } else {
                self.counts[g][g] as f64 / t[g] as f64
            }
        })
    }

    pub fn overall_accuracy(&self) -> f64 {
        (self.counts[0][0] + self.counts[1][1]) as f64 / self.total() as f64
    }
}

/// Per-parameter error summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    pub rmce: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    /// RNG stream of the successful attempt.
    pub stream: u64,
    pub attempts: usize,
    pub iterations: usize,
    pub converged: bool,
    pub loglik: f64,
    pub estimates: Vec<f64>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub params: Vec<ParamSummary>,
    pub confusion: ConfusionMatrix,
    pub replications: Vec<ReplicationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
    /// Record elapsed wall time in the report (breaks byte-identity).
    pub timing: bool,
}

/// Stream of attempt `k` of replication `r`: attempts beyond the first move
/// to a disjoint block of stream ids.
pub fn replication_stream(replication: usize, attempt: usize) -> u64 {
    ((attempt as u64) << 32) | replication as u64
}

fn one_attempt(
    cfg: &SimConfig,
    laws: &(EsnParams, EsnParams),
    stream: u64,
) -> Result<ReplicationRecord> {
    let mut rng = rng_stream(cfg.seed, stream);
    let y1 = laws.0.sample(&mut rng, cfg.train_n);
    let y2 = laws.1.sample(&mut rng, cfg.train_n);
    let data = TrainingData::new(y1, y2)?;
    let fitted = fit(&data, cfg.tau, cfg.fit_options())?;
    let gp = fitted.theta.group_pair(cfg.priors)?;
    let rule = Classifier::build(&gp, cfg.rule_kind)?;

    let mut confusion = ConfusionMatrix::default();
    for (law, original) in [(&laws.0, Group::One), (&laws.1, Group::Two)] {
        let test = law.sample(&mut rng, cfg.test_n);
        for row in test.row_iter() {
            confusion.record(original, rule.classify(&row.transpose())?);
        }
    }
    Ok(ReplicationRecord {
        index: 0,
        stream,
        attempts: 0,
        iterations: fitted.iterations,
        converged: fitted.converged,
        loglik: fitted.loglik(),
        estimates: fitted.theta.flatten(),
        confusion,
    })
}

fn run_replication(
    cfg: &SimConfig,
    laws: &(EsnParams, EsnParams),
    index: usize,
) -> Result<ReplicationRecord> {
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        match one_attempt(cfg, laws, replication_stream(index, attempt)) {
            Ok(mut rec) => {
                rec.index = index;
                rec.attempts = attempt + 1;
                return Ok(rec);
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::ReplicationFailed {
        replication: index,
        attempts: MAX_ATTEMPTS,
        last,
    })
}

/// Runs all replications. Each replication owns its RNG stream, so the
/// report does not depend on the number of workers.
pub fn run_study(cfg: &SimConfig, opts: RunOptions) -> Result<SimReport> {
    cfg.validate()?;
    let start = Instant::now();
    let truth = cfg.truth()?;
    let laws = truth.groups()?;
    let work = || -> Result<Vec<ReplicationRecord>> {
        (0..cfg.replications)
            .into_par_iter()
            .map(|r| run_replication(cfg, &laws, r))
            .collect()
    };
    let records = match opts.workers {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };

    let p = truth.flatten().len();
    let estimates = DMatrix::from_fn(records.len(), p, |i, j| records[i].estimates[j]);
    let truth_vec = DVector::from_vec(truth.flatten());
    let (bias, rmce) = bias_mce(&estimates, &truth_vec)?;
    let params = Theta::param_names(cfg.dim())
        .into_iter()
        .enumerate()
        .map(|(j, name)| ParamSummary {
            name,
            truth: truth_vec[j],
            bias: bias[j],
            rmce: rmce[j],
        })
        .collect();
    let mut confusion = ConfusionMatrix::default();
    for r in &records {
        confusion.merge(&r.confusion);
    }
    Ok(SimReport {
        config: cfg.clone(),
        params,
        confusion,
        replications: records,
        wall_time_secs: opts.timing.then(|| start.elapsed().as_secs_f64()),
    })
}

/// `BIAS = mean(θ̂) − θ` and `√MCE = √(mean((θ̂ − θ)²))` per column.
pub fn bias_mce(
    estimates: &DMatrix<f64>,
    truth: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if estimates.nrows() == 0 {
        return Err(Error::InvalidArgument(
            "need at least one replication".into(),
        ));
    }
    if estimates.ncols() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: estimates.ncols(),
        });
    }
    let b = estimates.nrows() as f64;
    let mut bias = DVector::zeros(truth.len());
    let mut rmce = DVector::zeros(truth.len());
    for j in 0..truth.len() {
        let col = estimates.column(j);
        bias[j] = col.iter().map(|x| x - truth[j]).sum::<f64>() / b;
        rmce[j] = (col.iter().map(|x| (x - truth[j]).powi(2)).sum::<f64>() / b).sqrt();
    }
    Ok((bias, rmce))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::InvalidArgument(format!("unknown format '{s}'"))),
        }
    }
}

pub fn report_json(report: &SimReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Parameter rows `param,truth,bias,rmce` followed by the confusion block as
/// `#` comment lines.
pub fn report_csv(report: &SimReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::InvalidArgument(e.to_string());
    w.write_record(["param", "truth", "bias", "rmce"])
        .map_err(io)?;
    for p in &report.params {
        w.write_record([
            p.name.clone(),
            p.truth.to_string(),
            p.bias.to_string(),
            p.rmce.to_string(),
        ])
        .map_err(io)?;
    }
    let mut out = String::from_utf8(
        w.into_inner()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?,
    )
    .expect("csv output is UTF-8");
    let c = &report.confusion.counts;
    out.push_str("# confusion allocated\\original,group1,group2\n");
    out.push_str(&format!("# group1,{},{}\n", c[0][0], c[0][1]));
    out.push_str(&format!("# group2,{},{}\n", c[1][0], c[1][1]));
    Ok(out)
}

pub fn emit_report(report: &SimReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Json => report_json(report)?,
        ReportFormat::Csv => report_csv(report)?,
    };
    let io = |source| Error::Io {
        path: path.into(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)?;
    Ok(())
}

pub fn read_report_json(path: &Path) -> Result<SimReport> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.into(),
        message: e.to_string(),
    })
}

/// Parameter rows and confusion counts from a CSV report.
pub fn read_report_csv(path: &Path) -> Result<(Vec<ParamSummary>, ConfusionMatrix)> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })?;
    let fmt = |message: String| Error::Format {
        path: path.into(),
        message,
    };
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut params = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| fmt(format!("bad number in row {:?}", rec)))
        };
        params.push(ParamSummary {
            name: rec.get(0).unwrap_or_default().to_string(),
            truth: num(1)?,
            bias: num(2)?,
            rmce: num(3)?,
        });
    }
    let mut confusion = ConfusionMatrix::default();
    let mut rows = 0;
    for line in text.lines().filter_map(|l| l.strip_prefix("# group")) {
        let parts: Vec<&str> = line.split(',').collect();
        let a: usize = parts[0]
            .parse()
            .map_err(|_| fmt(format!("bad confusion row '{line}'")))?;
        if parts.len() != 3 || !(1..=2).contains(&a) {
            return Err(fmt(format!("bad confusion row '{line}'")));
        }
        for o in 0..2 {
            confusion.counts[a - 1][o] = parts[o + 1]
                .parse()
                .map_err(|_| fmt(format!("bad count in '{line}'")))?;
        }
        rows += 1;
    }
    if rows != 2 {
        return Err(fmt("missing confusion block".into()));
    }
    Ok((params, confusion))
}
