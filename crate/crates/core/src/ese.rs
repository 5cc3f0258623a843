//! Extended skew-elliptical laws over the normal and Student-t density
//! generators, and the two-group posterior/classification rule built on them.

use std::f64::consts::PI;

use libm::lgamma;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{finite, Error, Result};
use crate::numkit::{log_norm_cdf, norm_cdf, SpdFactor};

/// Elliptical density generator family `h^(m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityGenerator {
    Normal,
    StudentT { nu: f64 },
}

impl DensityGenerator {
    pub fn student_t(nu: f64) -> Result<Self> {
        if nu.is_finite() && nu > 0.0 {
            Ok(Self::StudentT { nu })
        } else {
            Err(Error::InvalidArgument(format!(
                "degrees of freedom must be > 0, got {nu}"
            )))
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::Normal => Ok(()),
            Self::StudentT { nu } => Self::student_t(nu).map(|_| ()),
        }
    }

    /// `ln h^(m)(u)`.
    pub fn log_density(&self, m: usize, u: f64) -> Result<f64> {
        if m == 0 {
            return Err(Error::InvalidArgument(
                "generator dimension must be >= 1".into(),
            ));
        }
        finite("u", u)?;
        if u < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "generator argument must be >= 0, got {u}"
            )));
        }
        let m = m as f64;
        Ok(match *self {
            Self::Normal => -0.5 * m * (2.0 * PI).ln() - 0.5 * u,
            Self::StudentT { nu } => {
                lgamma(0.5 * (m + nu))
                    - lgamma(0.5 * nu)
                    - 0.5 * m * (PI * nu).ln()
                    - 0.5 * (m + nu) * (u / nu).ln_1p()
            }
        })
    }

    /// `F(x; h^(1))`, the CDF of the univariate marginal generator.
    pub fn marginal_cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Normal => norm_cdf(x),
            Self::StudentT { nu } => t_cdf(nu, x),
        }
    }

    fn log_marginal_cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Normal => log_norm_cdf(x),
            Self::StudentT { nu } => t_cdf(nu, x).ln(),
        }
    }

    /// `F(x; h_Q^(1))` for the conditional generator
    /// `h_Q^(1)(w) = h^(d+1)(w + Q)/h^(d)(Q)`.
    ///
    /// For the t family this is a t law with `nu + d` degrees of freedom and
    /// scale `sqrt((nu + Q)/(nu + d))`.
    pub fn conditional_cdf(&self, x: f64, q: f64, d: usize) -> Result<f64> {
        Ok(self.log_conditional_cdf(x, q, d)?.exp())
    }

    fn log_conditional_cdf(&self, x: f64, q: f64, d: usize) -> Result<f64> {
        if q.is_nan() || q < 0.0 {
            return Err(Error::InvalidArgument(format!("Q must be >= 0, got {q}")));
        }
        Ok(match *self {
            Self::Normal => log_norm_cdf(x),
            Self::StudentT { nu } => {
                let d = d as f64;
                let scale = ((nu + q) / (nu + d)).sqrt();
                t_cdf(nu + d, x / scale).ln()
            }
        })
    }
}

fn t_cdf(nu: f64, x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    StudentsT::new(0.0, 1.0, nu)
        .expect("degrees of freedom validated on construction")
        .cdf(x)
}

/// `h^(m)(u)` for the given generator.
pub fn generator_density(gen: DensityGenerator, m: usize, u: f64) -> Result<f64> {
    gen.validate()?;
    Ok(gen.log_density(m, u)?.exp())
}

/// `F(x; h_Q^(1))`, see [`DensityGenerator::conditional_cdf`].
pub fn conditional_cdf(gen: DensityGenerator, x: f64, q: f64, d: usize) -> Result<f64> {
    gen.validate()?;
    gen.conditional_cdf(x, q, d)
}

/// One extended skew-elliptical law `ESE_d(ξ, Ω, η, τ, h)`.
#[derive(Debug, Clone)]
pub struct EseParams {
    xi: DVector<f64>,
    omega: DMatrix<f64>,
    eta: DVector<f64>,
    tau: f64,
    tau_bar: f64,
    gen: DensityGenerator,
    omega_factor: SpdFactor,
}

impl EseParams {
    pub fn new(
        xi: DVector<f64>,
        omega: DMatrix<f64>,
        eta: DVector<f64>,
        tau: f64,
        gen: DensityGenerator,
    ) -> Result<Self> {
        let d = xi.len();
        if omega.nrows() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: omega.nrows(),
            });
        }
        if eta.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: eta.len(),
            });
        }
        finite("tau", tau)?;
        gen.validate()?;
        let omega_factor = SpdFactor::new(&omega)?;
        let s = (eta.transpose() * &omega * &eta)[(0, 0)];
        Ok(Self {
            tau_bar: tau * (1.0 + s).sqrt(),
            xi,
            omega,
            eta,
            tau,
            gen,
            omega_factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }
    pub fn xi(&self) -> &DVector<f64> {
        &self.xi
    }
    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }
    pub fn eta(&self) -> &DVector<f64> {
        &self.eta
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }
    pub fn tau_bar(&self) -> f64 {
        self.tau_bar
    }
    pub fn generator(&self) -> DensityGenerator {
        self.gen
    }

    /// Log-density without the `-ln F(τ; h^(1))` normalizer.
    fn log_kernel(&self, y: &DVector<f64>) -> Result<f64> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: y.len(),
            });
        }
        let centered = y - &self.xi;
        let q = self.omega_factor.quad_form(&centered);
        let arg = self.eta.dot(&centered) + self.tau_bar;
        Ok(-0.5 * self.omega_factor.log_det()
            + self.gen.log_density(self.dim(), q)?
            + self.gen.log_conditional_cdf(arg, q, self.dim())?)
    }

    pub fn log_pdf(&self, y: &DVector<f64>) -> Result<f64> {
        Ok(self.log_kernel(y)? - self.gen.log_marginal_cdf(self.tau))
    }
}

/// `|Ω|^{-1/2} h^(d)(Q) F(η⊤(y−ξ) + τ̄; h_Q^(1)) / F(τ; h^(1))`.
pub fn ese_pdf(p: &EseParams, y: &DVector<f64>) -> Result<f64> {
    Ok(p.log_pdf(y)?.exp())
}

/// Prior group probabilities `(π₁, π₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub p1: f64,
    pub p2: f64,
}

impl Priors {
    pub fn new(p1: f64, p2: f64) -> Result<Self> {
        let ok = p1.is_finite() && p2.is_finite() && p1 > 0.0 && p2 > 0.0;
        if !ok || ((p1 + p2) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidPriors(p1, p2));
        }
        Ok(Self { p1, p2 })
    }

    pub fn equal() -> Self {
        Self { p1: 0.5, p2: 0.5 }
    }

    pub fn swapped(&self) -> Self {
        Self {
            p1: self.p2,
            p2: self.p1,
        }
    }

    /// `ln(π₂/π₁)`, the Bayes threshold for log-likelihood-ratio rules.
    pub fn log_odds_threshold(&self) -> f64 {
        (self.p2 / self.p1).ln()
    }
}

impl Default for Priors {
    fn default() -> Self {
        Self::equal()
    }
}

/// Misclassification costs; `c21` is the cost of assigning to group 1 an
/// observation from group 2, `c12` the reverse. Raising `c21` makes group 1
/// harder to reach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Costs {
    pub c21: f64,
    pub c12: f64,
}

impl Default for Costs {
    fn default() -> Self {
        Self { c21: 1.0, c12: 1.0 }
    }
}

impl Costs {
    /// Threshold for `ln(f₁/f₂)`: assign group 1 iff the log ratio exceeds it.
    pub fn threshold(&self, priors: Priors) -> f64 {
        priors.log_odds_threshold() + (self.c21 / self.c12).ln()
    }
}

/// Group label of a two-group rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    One,
    Two,
}

impl Group {
    pub fn as_u8(self) -> u8 {
        match self {
            Group::One => 1,
            Group::Two => 2,
        }
    }

    pub fn index(self) -> usize {
        self.as_u8() as usize - 1
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Group::One),
            2 => Some(Group::Two),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Group::One => Group::Two,
            Group::Two => Group::One,
        }
    }

    /// Group 1 iff `score > threshold`; ties go to group 2.
    pub fn from_score(score: f64, threshold: f64) -> Self {
        if score > threshold {
            Group::One
        } else {
            Group::Two
        }
    }
}

fn check_pair(g1: &EseParams, g2: &EseParams) -> Result<()> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            expected: g1.dim(),
            got: g2.dim(),
        });
    }
    if g1.tau != g2.tau {
        return Err(Error::TauMismatch(g1.tau, g2.tau));
    }
    if g1.gen != g2.gen {
        return Err(Error::InvalidArgument(
            "groups must share the density generator".into(),
        ));
    }
    Ok(())
}

/// Posterior selection probabilities `(π₁(y|τ), π₂(y|τ))`.
pub fn ese_posterior(
    groups: (&EseParams, &EseParams),
    priors: Priors,
    y: &DVector<f64>,
) -> Result<(f64, f64)> {
    let (g1, g2) = groups;
    check_pair(g1, g2)?;
    let l1 = priors.p1.ln() + g1.log_kernel(y)?;
    let l2 = priors.p2.ln() + g2.log_kernel(y)?;
    // logistic of the log-odds; the complementary form keeps p1 + p2 == 1
    let diff = l1 - l2;
    let p1 = if diff >= 0.0 {
        1.0 / (1.0 + (-diff).exp())
    } else {
        let e = diff.exp();
        e / (1.0 + e)
    };
    Ok((p1, 1.0 - p1))
}

/// Bayes allocation between two ESE groups sharing generator and τ.
pub fn ese_classify(
    groups: (&EseParams, &EseParams),
    priors: Priors,
    costs: Costs,
    y: &DVector<f64>,
) -> Result<Group> {
    let (g1, g2) = groups;
    check_pair(g1, g2)?;
    let score = g1.log_kernel(y)? - g2.log_kernel(y)?;
    Ok(Group::from_score(score, costs.threshold(priors)))
}
