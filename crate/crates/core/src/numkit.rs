//! Scalar and small-matrix numerics shared by the distribution, rule and
//! fitting code: the normal hazard ratio and its derivative, the standard
//! bivariate normal CDF, truncated-normal moments, Cholesky factors and a
//! seeded multivariate normal sampler.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erfc;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{finite, Error, Result};

/// `ln(sqrt(2π))`
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this point the hazard ratio and `ln Φ` switch to the continued
/// fraction for the Mills ratio.
const TAIL_CUTOFF: f64 = -8.0;

/// Seedable stream used for every random draw in the crate.
pub type SimRng = ChaCha8Rng;

/// Independent stream `stream` of the generator seeded by `seed`.
///
/// Streams with different indices never overlap, so a replication can be
/// assigned its own stream regardless of which worker runs it.
pub fn rng_stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `1/R(t)` where `R(t) = Φ(-t)/φ(t)` is the Mills ratio, by Lentz's
/// evaluation of `t + 1/(t + 2/(t + 3/(t + ...)))`. Intended for `t >= 8`.
fn inverse_mills_cf(t: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = t;
    let mut c = f;
    let mut d = 0.0;
    for n in 1..500 {
        let a = n as f64;
        d = t + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = t + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    f
}

/// `ln Φ(x)`, finite down to `x = -40` and beyond.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x < TAIL_CUTOFF {
        -0.5 * x * x - LN_SQRT_2PI - inverse_mills_cf(-x).ln()
    } else if x > 5.0 {
        (-norm_cdf(-x)).ln_1p()
    } else {
        norm_cdf(x).ln()
    }
}

/// Unchecked `φ(x)/Φ(x)`; NaN in, NaN out.
pub(crate) fn hazard(x: f64) -> f64 {
    if x < TAIL_CUTOFF {
        inverse_mills_cf(-x)
    } else {
        norm_pdf(x) / norm_cdf(x)
    }
}

/// Unchecked `-ζ₁(x)(x + ζ₁(x))`.
pub(crate) fn hazard_slope(x: f64) -> f64 {
    let z = hazard(x);
    -z * (x + z)
}

/// `ζ₁(x) = φ(x)/Φ(x)`.
pub fn zeta1(x: f64) -> Result<f64> {
    Ok(hazard(finite("x", x)?))
}

/// `ζ₂(x) = ζ₁'(x) = -ζ₁(x){x + ζ₁(x)}`, which lies in `(-1, 0)`.
pub fn zeta2(x: f64) -> Result<f64> {
    Ok(hazard_slope(finite("x", x)?))
}

// Gauss-Legendre half-rules (nodes on (0,1], weights) used by `bvn_upper`.
const GL6: [(f64, f64); 3] = [
    (0.932_469_514_203_152_2, 0.171_324_492_379_170_5),
    (0.661_209_386_466_264_7, 0.360_761_573_048_138_4),
    (0.238_619_186_083_197, 0.467_913_934_572_690_4),
];
const GL12: [(f64, f64); 6] = [
    (0.981_560_634_246_719_1, 0.047_175_336_386_511_77),
    (0.904_117_256_370_475, 0.106_939_325_995_318_3),
    (0.769_902_674_194_305, 0.160_078_328_543_346_4),
    (0.587_317_954_286_617_1, 0.203_167_426_723_065_9),
    (0.367_831_498_998_180_2, 0.233_492_536_538_354_7),
    (0.125_233_408_511_469_2, 0.249_147_045_813_402_9),
];
const GL20: [(f64, f64); 10] = [
    (0.993_128_599_185_094_9, 0.017_614_007_139_152_12),
    (0.963_971_927_277_913_8, 0.040_601_429_800_386_94),
    (0.912_234_428_251_326, 0.062_672_048_334_109_06),
    (0.839_116_971_822_218_8, 0.083_276_741_576_704_75),
    (0.746_331_906_460_150_8, 0.101_930_119_817_240_4),
    (0.636_053_680_726_515, 0.118_194_531_961_518_4),
    (0.510_867_001_950_827_1, 0.131_688_638_449_176_6),
    (0.373_706_088_715_419_6, 0.142_096_109_318_382_1),
    (0.227_785_851_141_645_1, 0.149_172_986_472_603_7),
    (0.076_526_521_133_497_33, 0.152_753_387_130_725_9),
];

/// `P(X > h, Y > k)` for standard normals with correlation `r`, `|r| < 1`
/// (Drezner-Wesolowsky with Genz's refinements).
fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    if r == 0.0 {
        return norm_cdf(-h) * norm_cdf(-k);
    }
    let two_pi = 2.0 * PI;
    let rule: &[(f64, f64)] = if r.abs() < 0.3 {
        &GL6
    } else if r.abs() < 0.75 {
        &GL12
    } else {
        &GL20
    };
    // Nodes mapped to (0, 2): 1 - x and 1 + x share the weight.
    let nodes = rule.iter().flat_map(|&(x, w)| [(1.0 - x, w), (1.0 + x, w)]);

    let mut hk = h * k;
    if r.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = 0.5 * r.asin();
        let sum: f64 = nodes
            .map(|(x, w)| {
                let sn = (asr * x).sin();
                w * ((sn * hk - hs) / (1.0 - sn * sn)).exp()
            })
            .sum();
        return (sum * asr / two_pi + norm_cdf(-h) * norm_cdf(-k)).clamp(0.0, 1.0);
    }

    let mut k = k;
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    let mut bvn = 0.0;
    let one_minus_r2 = (1.0 - r) * (1.0 + r);
    let mut a = one_minus_r2.sqrt();
    let bs = (h - k) * (h - k);
    let c = (4.0 - hk) / 8.0;
    let d = (12.0 - hk) / 80.0;
    let asr = -0.5 * (bs / one_minus_r2 + hk);
    if asr > -100.0 {
        bvn = a
            * asr.exp()
            * (1.0 - c * (bs - one_minus_r2) * (1.0 - d * bs) / 3.0
                + c * d * one_minus_r2 * one_minus_r2);
    }
    if hk > -100.0 {
        let b = bs.sqrt();
        let sp = two_pi.sqrt() * norm_cdf(-b / a);
        bvn -= (-0.5 * hk).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
    }
    a *= 0.5;
    let sum: f64 = nodes
        .filter_map(|(x, w)| {
            let xs = (a * x) * (a * x);
            let asr = -0.5 * (bs / xs + hk);
            if asr <= -100.0 {
                return None;
            }
            let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
            let rs = (1.0 - xs).sqrt();
            let ep = (-0.5 * hk * xs / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
            Some(w * asr.exp() * (sp - ep))
        })
        .sum();
    bvn = (a * sum - bvn) / two_pi;

    let p = if r > 0.0 {
        bvn + norm_cdf(-h.max(k))
    } else if h >= k {
        -bvn
    } else {
        let l = if h < 0.0 {
            norm_cdf(k) - norm_cdf(h)
        } else {
            norm_cdf(-h) - norm_cdf(-k)
        };
        l - bvn
    };
    p.clamp(0.0, 1.0)
}

/// `P(Z₁ ≤ h, Z₂ ≤ k)` for a standard bivariate normal with correlation `rho`.
///
/// `rho = ±1` is handled as the degenerate univariate case; anything outside
/// `[-1, 1]` is rejected.
pub fn bvn_cdf(h: f64, k: f64, rho: f64) -> Result<f64> {
    finite("rho", rho)?;
    if h.is_nan() || k.is_nan() {
        return Err(Error::NonFinite {
            name: "h/k",
            value: f64::NAN,
        });
    }
    if rho.abs() > 1.0 {
        return Err(Error::InvalidArgument(format!(
            "correlation {rho} outside [-1, 1]"
        )));
    }
    if h == f64::NEG_INFINITY || k == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if h == f64::INFINITY {
        return Ok(norm_cdf(k));
    }
    if k == f64::INFINITY {
        return Ok(norm_cdf(h));
    }
    if rho == 1.0 {
        return Ok(norm_cdf(h.min(k)));
    }
    if rho == -1.0 {
        // Z₂ = -Z₁: P(-k ≤ Z₁ ≤ h)
        return Ok((norm_cdf(h) - norm_cdf(-k)).max(0.0));
    }
    Ok(bvn_upper(-h, -k, rho))
}

/// Law of a latent `U ~ N(alpha, beta²)` truncated to `U > -tau`, with the
/// standardized threshold `theta = (alpha + tau)/beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedConditional {
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub tau: f64,
}

impl TruncatedConditional {
    pub fn new(alpha: f64, beta: f64, tau: f64) -> Result<Self> {
        finite("alpha", alpha)?;
        finite("tau", tau)?;
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "beta must be > 0, got {beta}"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            theta: (alpha + tau) / beta,
            tau,
        })
    }

    /// `β²(1 + ζ₂(θ))`, the conditional variance without the cancellation of
    /// `m2 - m1²`.
    pub fn variance(&self) -> f64 {
        self.beta * self.beta * (1.0 + hazard_slope(self.theta))
    }
}

/// First and second moments of the truncated latent variable.
pub fn trunc_norm_moments(cond: &TruncatedConditional) -> (f64, f64) {
    let TruncatedConditional {
        alpha,
        beta,
        theta,
        tau,
    } = *cond;
    let z = hazard(theta);
    let m1 = alpha + beta * z;
    let m2 = alpha * alpha + beta * beta + (alpha - tau) * beta * z;
    (m1, m2)
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
///
/// A pivot at or below `1e-12 * trace(m)` is reported as
/// [`Error::NotPositiveDefinite`].
pub fn chol_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            name: "matrix entry",
            value: f64::NAN,
        });
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let floor = 1e-12 * m.trace().abs();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for p in 0..j {
            pivot -= l[(j, p)] * l[(j, p)];
        }
        if !(pivot > floor) {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// A validated SPD matrix together with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    lower: DMatrix<f64>,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            lower: chol_lower(m)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self
            .lower
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal");
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e));
        }
        // exact symmetry for downstream comparisons
        (&inv + inv.transpose()) * 0.5
    }

    /// `x⊤ M⁻¹ x`
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        let y = self
            .lower
            .solve_lower_triangular(x)
            .expect("Cholesky factor has a positive diagonal");
        y.norm_squared()
    }
}

/// `n` i.i.d. rows from `N_d(mean, cov)`.
pub fn mvn_sample<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
    n: usize,
) -> Result<DMatrix<f64>> {
    let d = mean.len();
    if cov.nrows() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: cov.nrows(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be >= 1".into()));
    }
    let l = chol_lower(cov)?;
    let mut out = DMatrix::zeros(n, d);
    let mut z = DVector::zeros(d);
    for i in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let x = mean + &l * &z;
        out.set_row(i, &x.transpose());
    }
    Ok(out)
}
