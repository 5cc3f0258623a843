#![allow(dead_code)]

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            let pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                x[i] = -z;
                x[n - 1 - i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
                w[n - 1 - i] = w[i];
                break;
            }
        }
    }
    (x, w)
}

/// Composite Gauss-Legendre integral of `f` over `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        let mut s = 0.0;
        for k in 0..order {
            s += w[k] * f(mid + 0.5 * h * x[k]);
        }
        total += 0.5 * h * s;
    }
    total
}

/// Tensor-product rule over a rectangle.
pub fn integrate2(
    f: impl Fn(f64, f64) -> f64,
    (ax, bx): (f64, f64),
    (ay, by): (f64, f64),
    panels: usize,
    order: usize,
) -> f64 {
    integrate(
        |x| integrate(|y| f(x, y), ay, by, panels, order),
        ax,
        bx,
        panels,
        order,
    )
}

/// Standard normal density and CDF computed independently of the crate.
pub fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn big_phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// One-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_test(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

/// Small deterministic generator for picking random test configurations.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn index(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }
}

/// Random SPD matrix `LL⊤ + 0.3 I` with entries of moderate size.
pub fn random_spd(rng: &mut Lcg, d: usize) -> nalgebra::DMatrix<f64> {
    let l = nalgebra::DMatrix::from_fn(
        d,
        d,
        |i, j| if j <= i { rng.uniform(-1.0, 1.0) } else { 0.0 },
    );
    &l * l.transpose() + nalgebra::DMatrix::identity(d, d) * 0.3
}

pub fn random_vec(rng: &mut Lcg, d: usize, lo: f64, hi: f64) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_fn(d, |_, _| rng.uniform(lo, hi))
}

/// Truncated moments by quadrature in the standardized variable.
pub fn trunc_moments_quadrature(alpha: f64, beta: f64, tau: f64) -> (f64, f64) {
    let theta = (alpha + tau) / beta;
    let lo = -theta;
    let lo_eff = lo.max(-40.0);
    let hi = lo_eff.max(0.0) + 40.0;
    // density of z = (u − α)/β given z > −θ, scaled by exp(θ'²/2) to avoid
    // underflow deep in the tail
    let shift = if lo > 0.0 { lo } else { 0.0 };
    let w = |z: f64| (-0.5 * (z * z - shift * shift)).exp();
    let mass = integrate(w, lo_eff, hi, 400, 16);
    let m1 = integrate(|z| (alpha + beta * z) * w(z), lo_eff, hi, 400, 16) / mass;
    let m2 = integrate(|z| (alpha + beta * z).powi(2) * w(z), lo_eff, hi, 400, 16) / mass;
    (m1, m2)
}
