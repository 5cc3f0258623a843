//! EM fitting of two ESN groups with common `Σ`, `δ` and a known `τ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classify::GroupPair;
use crate::error::{finite, Error, Result};
use crate::ese::Priors;
use crate::esn::EsnParams;
use crate::numkit::{
    log_norm_cdf, trunc_norm_moments, SpdFactor, TruncatedConditional, LN_SQRT_2PI,
};

/// Denominator of the `δ` update below which the latent carries no signal.
const FLAT_TOL: f64 = 1e-12;

/// Estimation state `(ξ₁, ξ₂, Σ, δ)` at a fixed `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub xi1: DVector<f64>,
    pub xi2: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub delta: DVector<f64>,
    pub tau: f64,
}

impl Theta {
    pub fn dim(&self) -> usize {
        self.xi1.len()
    }

    pub fn group(&self, g: usize) -> Result<EsnParams> {
        let xi = if g == 0 { &self.xi1 } else { &self.xi2 };
        EsnParams::from_delta(xi.clone(), self.sigma.clone(), self.delta.clone(), self.tau)
    }

    pub fn groups(&self) -> Result<(EsnParams, EsnParams)> {
        Ok((self.group(0)?, self.group(1)?))
    }

    pub fn group_pair(&self, priors: Priors) -> Result<GroupPair> {
        let (g1, g2) = self.groups()?;
        GroupPair::new(g1, g2, priors)
    }

    /// `(ξ₁₁.., ξ₂₁.., σ₁₁.., σ₁₂.., δ..)`: diagonal of `Σ` first, then the
    /// upper triangle row by row.
    pub fn flatten(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out: Vec<f64> = self.xi1.iter().chain(self.xi2.iter()).copied().collect();
        out.extend((0..d).map(|i| self.sigma[(i, i)]));
        for i in 0..d {
            for j in i + 1..d {
                out.push(self.sigma[(i, j)]);
            }
        }
        out.extend(self.delta.iter());
        out
    }

    pub fn param_names(d: usize) -> Vec<String> {
        let mut out = Vec::new();
        for g in 1..=2 {
            out.extend((1..=d).map(|j| format!("xi{g}{j}")));
        }
        out.extend((1..=d).map(|i| format!("sigma{i}{i}")));
        for i in 1..=d {
            for j in i + 1..=d {
                out.push(format!("sigma{i}{j}"));
            }
        }
        out.extend((1..=d).map(|j| format!("delta{j}")));
        out
    }

    /// Largest entrywise difference relative to `max(1, |entry|)`.
    pub fn max_rel_diff(&self, other: &Theta) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
            .fold(0.0, f64::max)
    }
}

/// Plain-array form of [`Theta`] for JSON model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaRecord {
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub delta: Vec<f64>,
    pub tau: f64,
}

impl From<&Theta> for ThetaRecord {
    fn from(t: &Theta) -> Self {
        Self {
            xi1: t.xi1.iter().copied().collect(),
            xi2: t.xi2.iter().copied().collect(),
            sigma: t
                .sigma
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            delta: t.delta.iter().copied().collect(),
            tau: t.tau,
        }
    }
}

/// Square matrix from row vectors.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: r.len(),
        });
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

impl TryFrom<&ThetaRecord> for Theta {
    type Error = Error;

    fn try_from(r: &ThetaRecord) -> Result<Self> {
        let theta = Theta {
            xi1: DVector::from_column_slice(&r.xi1),
            xi2: DVector::from_column_slice(&r.xi2),
            sigma: matrix_from_rows(&r.sigma)?,
            delta: DVector::from_column_slice(&r.delta),
            tau: finite("tau", r.tau)?,
        };
        let d = theta.dim();
        for len in [theta.xi2.len(), theta.delta.len(), theta.sigma.nrows()] {
            if len != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: len,
                });
            }
        }
        theta.groups()?;
        Ok(theta)
    }
}

/// Per-group samples, one observation per row.
#[derive(Debug, Clone)]
pub struct TrainingData {
    y1: DMatrix<f64>,
    y2: DMatrix<f64>,
}

impl TrainingData {
    pub fn new(y1: DMatrix<f64>, y2: DMatrix<f64>) -> Result<Self> {
        let d = y1.ncols();
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        if y2.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: y2.ncols(),
            });
        }
        for (g, y) in [&y1, &y2].into_iter().enumerate() {
            if y.nrows() < d + 2 {
                return Err(Error::InvalidArgument(format!(
                    "group {} has {} observations, need at least {}",
                    g + 1,
                    y.nrows(),
                    d + 2
                )));
            }
            if let Some(&bad) = y.iter().find(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    name: "observation",
                    value: bad,
                });
            }
        }
        Ok(Self { y1, y2 })
    }

    pub fn dim(&self) -> usize {
        self.y1.ncols()
    }

    pub fn group(&self, g: usize) -> &DMatrix<f64> {
        if g == 0 {
            &self.y1
        } else {
            &self.y2
        }
    }

    pub fn n(&self, g: usize) -> usize {
        self.group(g).nrows()
    }

    pub fn total(&self) -> usize {
        self.y1.nrows() + self.y2.nrows()
    }

    fn mean(&self, g: usize) -> DVector<f64> {
        self.group(g).row_mean().transpose()
    }

    /// Within-group scatter `Σ_i Σ_j (y_ij − ȳ_i)(y_ij − ȳ_i)⊤`.
    pub fn pooled_scatter(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut s = DMatrix::zeros(d, d);
        for g in 0..2 {
            let c = centered(self.group(g), &self.mean(g));
            s += c.transpose() * &c;
        }
        s
    }
}

fn centered(y: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = y.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    c
}

/// Conditional latent moments `E[U | y]`, `E[U² | y]` per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct EStepMoments {
    pub u_hat: [DVector<f64>; 2],
    pub u2_hat: [DVector<f64>; 2],
}

fn check_shapes(theta: &Theta, data: &TrainingData) -> Result<()> {
    let d = data.dim();
    for len in [
        theta.xi1.len(),
        theta.xi2.len(),
        theta.delta.len(),
        theta.sigma.nrows(),
    ] {
        if len != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: len,
            });
        }
    }
    finite("tau", theta.tau)?;
    Ok(())
}

/// `Σ_i Σ_j ln f_i(y_ij)`.
pub fn observed_loglik(theta: &Theta, data: &TrainingData) -> Result<f64> {
    check_shapes(theta, data)?;
    let mut total = 0.0;
    for g in 0..2 {
        let law = theta.group(g)?;
        for row in data.group(g).row_iter() {
            total += law.log_pdf(&row.transpose())?;
        }
    }
    Ok(total)
}

/// Latent posterior parameters for every observation.
pub fn latent_conditionals(
    theta: &Theta,
    data: &TrainingData,
) -> Result<[Vec<TruncatedConditional>; 2]> {
    check_shapes(theta, data)?;
    let factor = SpdFactor::new(&theta.sigma)?;
    let w = factor.solve(&theta.delta);
    let beta2 = 1.0 / (1.0 + w.dot(&theta.delta));
    let beta = beta2.sqrt();
    let per_group = |g: usize| -> Result<Vec<TruncatedConditional>> {
        let xi = if g == 0 { &theta.xi1 } else { &theta.xi2 };
        data.group(g)
            .row_iter()
            .map(|row| {
                let alpha = beta2 * w.dot(&(row.transpose() - xi));
                TruncatedConditional::new(alpha, beta, theta.tau)
            })
            .collect()
    };
    Ok([per_group(0)?, per_group(1)?])
}

pub fn e_step(theta: &Theta, data: &TrainingData) -> Result<EStepMoments> {
    Ok(e_step_loglik(theta, data)?.0)
}

/// E-step moments together with the observed log-likelihood at `theta`,
/// sharing one pass over the data.
pub fn e_step_loglik(theta: &Theta, data: &TrainingData) -> Result<(EStepMoments, f64)> {
    check_shapes(theta, data)?;
    let d = data.dim();
    let law = theta.group(0)?;
    let omega_inv = law.omega_inv();
    let w = law.sigma_factor().solve(&theta.delta);
    let beta2 = 1.0 / (1.0 + w.dot(&theta.delta));
    let beta = beta2.sqrt();
    let tau = theta.tau;
    let offset = -(d as f64) * LN_SQRT_2PI - 0.5 * law.omega_log_det() - log_norm_cdf(tau);

    let mut loglik = 0.0;
    let mut r = vec![0.0; d];
    let mut out: [(Vec<f64>, Vec<f64>); 2] = Default::default();
    for g in 0..2 {
        let xi = if g == 0 { &theta.xi1 } else { &theta.xi2 };
        let y = data.group(g);
        let (m1s, m2s) = &mut out[g];
        m1s.reserve(y.nrows());
        m2s.reserve(y.nrows());
        for i in 0..y.nrows() {
            for j in 0..d {
                r[j] = y[(i, j)] - xi[j];
            }
            let mut q = 0.0;
            let mut s = 0.0;
            for j in 0..d {
                let mut row = 0.0;
                for k in 0..d {
                    row += omega_inv[(j, k)] * r[k];
                }
                q += r[j] * row;
                s += w[j] * r[j];
            }
            let cond = TruncatedConditional::new(beta2 * s, beta, tau)?;
            loglik += offset - 0.5 * q + log_norm_cdf(cond.theta);
            let (m1, m2) = trunc_norm_moments(&cond);
            m1s.push(m1);
            m2s.push(m2);
        }
    }
    let [(a1, a2), (b1, b2)] = out;
    let moments = EStepMoments {
        u_hat: [DVector::from_vec(a1), DVector::from_vec(b1)],
        u2_hat: [DVector::from_vec(a2), DVector::from_vec(b2)],
    };
    Ok((moments, loglik))
}

/// Sufficient statistics of the M-step: `A = Σ Û(y − ȳ_i)`,
/// `B = Σ Û² − Σ n_i Ū_i²`, plus group means of data and `Û`.
struct MStats {
    a: DVector<f64>,
    b: f64,
    ybar: [DVector<f64>; 2],
    ubar: [f64; 2],
}

fn m_stats(data: &TrainingData, moments: &EStepMoments) -> Result<MStats> {
    let d = data.dim();
    let mut a = DVector::zeros(d);
    let mut b = 0.0;
    let mut ybar = [DVector::zeros(d), DVector::zeros(d)];
    let mut ubar = [0.0; 2];
    for g in 0..2 {
        let y = data.group(g);
        let (u, u2) = (&moments.u_hat[g], &moments.u2_hat[g]);
        if u.len() != y.nrows() || u2.len() != y.nrows() {
            return Err(Error::DimensionMismatch {
                expected: y.nrows(),
                got: u.len(),
            });
        }
        let n = y.nrows() as f64;
        ybar[g] = data.mean(g);
        ubar[g] = u.sum() / n;
        let c = centered(y, &ybar[g]);
        a += c.transpose() * u;
        b += u2.sum() - n * ubar[g] * ubar[g];
    }
    Ok(MStats { a, b, ybar, ubar })
}

/// Closed-form maximizer of the expected complete-data log-likelihood.
///
/// `δ = A/B` comes first since the location update uses it; then
/// `ξ_i = ȳ_i − δŪ_i` and
/// `Σ = N⁻¹[S − δA⊤ − Aδ⊤ + Bδδ⊤]`, which equals `(S − AA⊤/B)/N`.
pub fn m_step(data: &TrainingData, moments: &EStepMoments, tau: f64) -> Result<Theta> {
    let st = m_stats(data, moments)?;
    if !(st.b > FLAT_TOL * data.total() as f64) {
        return Err(Error::FlatDirection(st.b));
    }
    let delta = &st.a / st.b;
    let xi1 = &st.ybar[0] - &delta * st.ubar[0];
    let xi2 = &st.ybar[1] - &delta * st.ubar[1];
    let s = data.pooled_scatter();
    let cross = &delta * st.a.transpose();
    let raw = s - &cross - cross.transpose() + &delta * delta.transpose() * st.b;
    let sigma = (&raw + raw.transpose()) * (0.5 / data.total() as f64);
    Ok(Theta {
        xi1,
        xi2,
        sigma,
        delta,
        tau,
    })
}

/// Starting point: group means, pooled covariance and a small `δ` oriented
/// by the sign of each coordinate's pooled skewness.
pub fn init(data: &TrainingData, tau: f64) -> Result<Theta> {
    finite("tau", tau)?;
    let d = data.dim();
    let n = data.total() as f64;
    let sigma = data.pooled_scatter() / n;
    let mut third = DVector::<f64>::zeros(d);
    for g in 0..2 {
        let c = centered(data.group(g), &data.mean(g));
        for row in c.row_iter() {
            for j in 0..d {
                third[j] += row[j].powi(3);
            }
        }
    }
    let delta = DVector::from_fn(d, |j, _| {
        let sd = sigma[(j, j)].sqrt();
        let sign = if third[j] < 0.0 { -1.0 } else { 1.0 };
        0.1 * sd * sign
    });
    Ok(Theta {
        xi1: data.mean(0),
        xi2: data.mean(1),
        sigma,
        delta,
        tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: Theta,
    pub iterations: usize,
    /// Observed log-likelihood at the start and after every iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        *self.trace.last().expect("trace holds the initial value")
    }
}

pub fn fit(data: &TrainingData, tau: f64, opts: FitOptions) -> Result<FitResult> {
    fit_from(data, init(data, tau)?, opts)
}

/// EM iterations from a given start; stops on a relative log-likelihood
/// change below `tol`.
pub fn fit_from(data: &TrainingData, start: Theta, opts: FitOptions) -> Result<FitResult> {
    let mut theta = start;
    let (mut moments, mut prev) = e_step_loglik(&theta, data)?;
    if !prev.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            loglik: prev,
        });
    }
    let mut trace = vec![prev];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        theta = m_step(data, &moments, theta.tau)?;
        let (next, ll) = e_step_loglik(&theta, data)?;
        if !ll.is_finite() {
            return Err(Error::Divergence {
                iteration: iterations,
                loglik: ll,
            });
        }
        moments = next;
        trace.push(ll);
        let change = (ll - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
        prev = ll;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        theta,
        iterations,
        trace,
        converged,
    })
}
