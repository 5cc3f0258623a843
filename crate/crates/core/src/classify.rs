//! Two-group discriminant rules for ESN populations, TPM evaluation and
//! threshold optimization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ese::{Group, Priors};
use crate::esn::EsnParams;
use crate::numkit::{hazard, hazard_slope, log_norm_cdf, trunc_norm_moments};

const HOMOSCEDASTIC_TOL: f64 = 1e-12;
const GOLDEN_TOL: f64 = 1e-8;
const BRACKET_HALF_WIDTH: f64 = 10.0;
const GRID_CELLS: usize = 400;

/// Two ESN groups with a common `τ` and prior weights.
#[derive(Debug, Clone)]
pub struct GroupPair {
    g1: EsnParams,
    g2: EsnParams,
    priors: Priors,
}

impl GroupPair {
    pub fn new(g1: EsnParams, g2: EsnParams, priors: Priors) -> Result<Self> {
        if g1.dim() != g2.dim() {
            return Err(Error::DimensionMismatch {
                expected: g1.dim(),
                got: g2.dim(),
            });
        }
        if g1.tau() != g2.tau() {
            return Err(Error::TauMismatch(g1.tau(), g2.tau()));
        }
        let priors = Priors::new(priors.p1, priors.p2)?;
        Ok(Self { g1, g2, priors })
    }

    /// Shared `(Ω, η, τ)`, group-specific locations.
    pub fn homoscedastic(
        xi1: DVector<f64>,
        xi2: DVector<f64>,
        omega: DMatrix<f64>,
        eta: DVector<f64>,
        tau: f64,
        priors: Priors,
    ) -> Result<Self> {
        let g1 = EsnParams::from_centered(xi1, omega, eta, tau)?;
        let g2 = g1.with_xi(xi2)?;
        Self::new(g1, g2, priors)
    }

    pub fn g1(&self) -> &EsnParams {
        &self.g1
    }
    pub fn g2(&self) -> &EsnParams {
        &self.g2
    }
    pub fn priors(&self) -> Priors {
        self.priors
    }
    pub fn dim(&self) -> usize {
        self.g1.dim()
    }

    /// Groups and priors exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            g1: self.g2.clone(),
            g2: self.g1.clone(),
            priors: self.priors.swapped(),
        }
    }

    pub fn with_priors(&self, priors: Priors) -> Result<Self> {
        Self::new(self.g1.clone(), self.g2.clone(), priors)
    }

    pub fn is_homoscedastic(&self) -> bool {
        let close_m = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            (a - b).amax() <= HOMOSCEDASTIC_TOL * a.amax().max(1.0)
        };
        let close_v = |a: &DVector<f64>, b: &DVector<f64>| {
            (a - b).amax() <= HOMOSCEDASTIC_TOL * a.amax().max(1.0)
        };
        close_m(self.g1.omega(), self.g2.omega()) && close_v(self.g1.eta(), self.g2.eta())
    }

    fn require_homoscedastic(&self) -> Result<()> {
        if self.is_homoscedastic() {
            Ok(())
        } else {
            Err(Error::Heteroscedastic)
        }
    }

    fn check_point(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: y.len(),
            });
        }
        Ok(())
    }

    fn xi_diff(&self) -> DVector<f64> {
        self.g1.xi() - self.g2.xi()
    }

    fn xi_mid(&self) -> DVector<f64> {
        (self.g1.xi() + self.g2.xi()) * 0.5
    }

    /// Posterior group probabilities under the ESN model.
    pub fn posterior(&self, y: &DVector<f64>) -> Result<(f64, f64)> {
        let diff = self.priors.p1.ln() - self.priors.p2.ln() + psi_esn(self, y)?;
        let p1 = if diff >= 0.0 {
            1.0 / (1.0 + (-diff).exp())
        } else {
            let e = diff.exp();
            e / (1.0 + e)
        };
        Ok((p1, 1.0 - p1))
    }
}

/// Heteroscedastic normal discriminant score on `(ξ_i, Ω_i)`.
pub fn psi_n(gp: &GroupPair, y: &DVector<f64>) -> Result<f64> {
    gp.check_point(y)?;
    let (g1, g2) = (gp.g1(), gp.g2());
    let q1 = g1.omega_factor().quad_form(&(y - g1.xi()));
    let q2 = g2.omega_factor().quad_form(&(y - g2.xi()));
    Ok(0.5 * (q2 - q1) + 0.5 * (g2.omega_log_det() - g1.omega_log_det()))
}

/// `(ξ₁ − ξ₂)⊤Ω⁻¹(y − ξ̄)`; requires a shared `Ω`.
pub fn psi_l(gp: &GroupPair, y: &DVector<f64>) -> Result<f64> {
    gp.check_point(y)?;
    let (o1, o2) = (gp.g1().omega(), gp.g2().omega());
    if (o1 - o2).amax() > HOMOSCEDASTIC_TOL * o1.amax().max(1.0) {
        return Err(Error::Heteroscedastic);
    }
    let w = gp.g1().omega_factor().solve(&gp.xi_diff());
    Ok(w.dot(&(y - gp.xi_mid())))
}

/// `ln f₁(y) − ln f₂(y)`.
pub fn psi_esn(gp: &GroupPair, y: &DVector<f64>) -> Result<f64> {
    let base = psi_n(gp, y)?;
    let s1 = gp.g1().skew_argument(y)?;
    let s2 = gp.g2().skew_argument(y)?;
    Ok(base + log_norm_cdf(s1) - log_norm_cdf(s2))
}

/// Affine score `a⊤y + b` with the scalar laws it induces in each group.
#[derive(Debug, Clone)]
pub struct LinearRule {
    pub a: DVector<f64>,
    pub b: f64,
    pub gamma: Option<f64>,
    pub law1: EsnParams,
    pub law2: EsnParams,
}

impl LinearRule {
    pub fn new(a: DVector<f64>, b: f64, gp: &GroupPair) -> Result<Self> {
        let (_, law1) = gp.g1().affine(&a, b)?;
        let (_, law2) = gp.g2().affine(&a, b)?;
        Ok(Self {
            a,
            b,
            gamma: None,
            law1,
            law2,
        })
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn score(&self, y: &DVector<f64>) -> Result<f64> {
        if y.len() != self.a.len() {
            return Err(Error::DimensionMismatch {
                expected: self.a.len(),
                got: y.len(),
            });
        }
        Ok(self.a.dot(y) + self.b)
    }
}

fn shared_terms(gp: &GroupPair) -> Result<(DVector<f64>, f64, f64)> {
    gp.require_homoscedastic()?;
    let g = gp.g1();
    let diff = gp.xi_diff();
    let base = g.omega_factor().solve(&diff);
    let eta_diff = g.eta().dot(&diff);
    Ok((base, eta_diff, g.tau_bar()))
}

/// Second-order Taylor linearization of the homoscedastic ESN rule:
/// `a = [Ω⁻¹ − ζ₂(τ̄)ηη⊤](ξ₁−ξ₂)`, `b = −a⊤ξ̄ − ζ₁(τ̄)η⊤(ξ₁−ξ₂)`.
pub fn psi_esn_linear(gp: &GroupPair) -> Result<LinearRule> {
    let (base, g, tau_bar) = shared_terms(gp)?;
    let eta = gp.g1().eta();
    let a = base - eta * (hazard_slope(tau_bar) * g);
    let b = -a.dot(&gp.xi_mid()) - hazard(tau_bar) * g;
    LinearRule::new(a, b, gp)
}

/// First-order linearization of [`psi_cn_exact`] for homoscedastic groups,
/// expanding each group's latent mean about its own location:
/// `ã = [Ω⁻¹ − ζ₂(τ̄)ηη⊤](ξ₁−ξ₂)`,
/// `b̃ = −ã⊤ξ̄ − ζ₁(τ̄)g + ½{1+ζ₂(τ̄)}g²(π₁−π₂)` with `g = η⊤(ξ₁−ξ₂)`.
pub fn psi_cn_linear(gp: &GroupPair) -> Result<LinearRule> {
    let (base, g, tau_bar) = shared_terms(gp)?;
    let eta = gp.g1().eta();
    let z2 = hazard_slope(tau_bar);
    let a = base - eta * (z2 * g);
    let pr = gp.priors();
    let b = -a.dot(&gp.xi_mid()) - hazard(tau_bar) * g + 0.5 * (1.0 + z2) * g * g * (pr.p1 - pr.p2);
    LinearRule::new(a, b, gp)
}

/// Conditional-normal rule: the log ratio of `N(ξ_i + δ_i u, Σ_i)` densities
/// averaged over the prior-weighted latent posteriors of `u` given `y`.
pub fn psi_cn_exact(gp: &GroupPair, y: &DVector<f64>) -> Result<f64> {
    gp.check_point(y)?;
    let (g1, g2) = (gp.g1(), gp.g2());
    let (f1, f2) = (g1.sigma_factor(), g2.sigma_factor());
    let (r1, r2) = (y - g1.xi(), y - g2.xi());
    let psi0 = 0.5 * (f2.quad_form(&r2) - f1.quad_form(&r1)) + 0.5 * (f2.log_det() - f1.log_det());

    let w1 = f1.solve(g1.delta());
    let w2 = f2.solve(g2.delta());
    let (m1a, m2a) = trunc_norm_moments(&g1.conditional_u(y)?);
    let (m1b, m2b) = trunc_norm_moments(&g2.conditional_u(y)?);
    let pr = gp.priors();
    let mix1 = pr.p1 * m1a + pr.p2 * m1b;
    let mix2 = pr.p1 * m2a + pr.p2 * m2b;

    let lin = w2.dot(&r2) - w1.dot(&r1);
    let quad = w2.dot(g2.delta()) - w1.dot(g1.delta());
    Ok(psi0 - lin * mix1 + 0.5 * quad * mix2)
}

/// `Δ² − ζ₂(τ̄){η⊤(ξ₁−ξ₂)}²`.
pub fn d12(gp: &GroupPair) -> Result<f64> {
    let (base, g, tau_bar) = shared_terms(gp)?;
    let delta2 = base.dot(&gp.xi_diff());
    Ok(delta2 - hazard_slope(tau_bar) * g * g)
}

/// `π₁ P(a⊤Y+b ≤ γ | Π₁) + π₂ P(a⊤Y+b > γ | Π₂)`.
pub fn tpm(rule: &LinearRule, gp: &GroupPair, gamma: f64) -> Result<f64> {
    if gamma.is_nan() {
        return Err(Error::NonFinite {
            name: "gamma",
            value: gamma,
        });
    }
    let pr = gp.priors();
    let miss1 = rule.law1.cdf1(gamma)?;
    let miss2 = 1.0 - rule.law2.cdf1(gamma)?;
    Ok((pr.p1 * miss1 + pr.p2 * miss2).clamp(0.0, 1.0))
}

/// Minimizes [`tpm`] over `γ`: a grid scan over the span of both score laws
/// (means ± 10 sd) followed by golden-section refinement around the best cell.
pub fn optimize_gamma(rule: &LinearRule, gp: &GroupPair) -> Result<f64> {
    let (mu1, v1) = rule.law1.mean_var();
    let (mu2, v2) = rule.law2.mean_var();
    let (s1, s2) = (v1[(0, 0)].max(0.0).sqrt(), v2[(0, 0)].max(0.0).sqrt());
    let lo = (mu1[0] - BRACKET_HALF_WIDTH * s1).min(mu2[0] - BRACKET_HALF_WIDTH * s2);
    let hi = (mu1[0] + BRACKET_HALF_WIDTH * s1).max(mu2[0] + BRACKET_HALF_WIDTH * s2);

    let mut err = None;
    let mut f = |x: f64| match tpm(rule, gp, x) {
        Ok(v) => v,
        Err(e) => {
            err.get_or_insert(e);
            f64::INFINITY
        }
    };
    let h = (hi - lo) / GRID_CELLS as f64;
    let (mut k_best, mut f_grid) = (0, f64::INFINITY);
    for k in 0..=GRID_CELLS {
        let v = f(lo + h * k as f64);
        if v < f_grid {
            (k_best, f_grid) = (k, v);
        }
    }
    let x_grid = lo + h * k_best as f64;
    let (x_best, f_best) = golden_section(&mut f, x_grid - h, x_grid + h, GOLDEN_TOL);
    if let Some(e) = err {
        return Err(e);
    }
    Ok(if f_grid < f_best { x_grid } else { x_best })
}

fn golden_section(f: &mut impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a).abs() > tol * (1.0 + a.abs().max(b.abs())) {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Group 1 iff `a⊤y + b > γ`.
pub fn classify_linear(rule: &LinearRule, y: &DVector<f64>) -> Result<Group> {
    let gamma = rule.gamma.ok_or(Error::ThresholdUnset)?;
    Ok(Group::from_score(rule.score(y)?, gamma))
}

/// Discriminant rule families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    EsnExact,
    EsnLinear,
    CnLinear,
    Ldf,
    Qdf,
}

impl RuleKind {
    pub const ALL: [RuleKind; 5] = [
        RuleKind::EsnExact,
        RuleKind::EsnLinear,
        RuleKind::CnLinear,
        RuleKind::Ldf,
        RuleKind::Qdf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleKind::EsnExact => "esn_exact",
            RuleKind::EsnLinear => "esn_linear",
            RuleKind::CnLinear => "cn_linear",
            RuleKind::Ldf => "ldf",
            RuleKind::Qdf => "qdf",
        }
    }

    pub fn is_linear(self) -> bool {
        matches!(
            self,
            RuleKind::EsnLinear | RuleKind::CnLinear | RuleKind::Ldf
        )
    }
}

impl std::fmt::Display for RuleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RuleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown rule kind '{s}'")))
    }
}

/// Score of an exact (non-linear) rule; compared against `ln(π₂/π₁)`.
pub fn exact_score(gp: &GroupPair, y: &DVector<f64>, kind: RuleKind) -> Result<f64> {
    match kind {
        RuleKind::EsnExact => psi_esn(gp, y),
        RuleKind::Qdf => psi_n(gp, y),
        RuleKind::Ldf => psi_l(gp, y),
        RuleKind::EsnLinear => {
            let r = psi_esn_linear(gp)?;
            r.score(y)
        }
        RuleKind::CnLinear => {
            let r = psi_cn_linear(gp)?;
            r.score(y)
        }
    }
}

/// Bayes allocation with threshold `ln(π₂/π₁)`.
pub fn classify_exact(gp: &GroupPair, y: &DVector<f64>, kind: RuleKind) -> Result<Group> {
    let score = exact_score(gp, y, kind)?;
    Ok(Group::from_score(score, gp.priors().log_odds_threshold()))
}

/// A ready-to-apply rule: linear kinds carry an optimized `γ`, the others
/// use the Bayes threshold.
#[derive(Debug, Clone)]
pub enum Classifier {
    Exact { gp: GroupPair, kind: RuleKind },
    Linear { rule: LinearRule, kind: RuleKind },
}

impl Classifier {
    pub fn build(gp: &GroupPair, kind: RuleKind) -> Result<Self> {
        let rule = match kind {
            RuleKind::EsnExact | RuleKind::Qdf => {
                return Ok(Classifier::Exact {
                    gp: gp.clone(),
                    kind,
                })
            }
            RuleKind::EsnLinear => psi_esn_linear(gp)?,
            RuleKind::CnLinear => psi_cn_linear(gp)?,
            RuleKind::Ldf => {
                gp.require_homoscedastic()?;
                let a = gp.g1().omega_factor().solve(&gp.xi_diff());
                let b = -a.dot(&gp.xi_mid());
                LinearRule::new(a, b, gp)?
            }
        };
        let gamma = optimize_gamma(&rule, gp)?;
        Ok(Classifier::Linear {
            rule: rule.with_gamma(gamma),
            kind,
        })
    }

    pub fn kind(&self) -> RuleKind {
        match self {
            Classifier::Exact { kind, .. } | Classifier::Linear { kind, .. } => *kind,
        }
    }

    pub fn classify(&self, y: &DVector<f64>) -> Result<Group> {
        match self {
            Classifier::Exact { gp, kind } => classify_exact(gp, y, *kind),
            Classifier::Linear { rule, .. } => classify_linear(rule, y),
        }
    }
}
