mod common;

use common::{big_phi, integrate, integrate2, phi, random_spd, random_vec, Lcg};
use esn_discrim::numkit::{rng_stream, trunc_norm_moments};
use esn_discrim::{DensityGenerator, EseParams, EsnParams};
use nalgebra::{DMatrix, DVector};

fn scalar(xi: f64, omega: f64, eta: f64, tau: f64) -> EsnParams {
    EsnParams::from_centered(
        DVector::from_element(1, xi),
        DMatrix::from_element(1, 1, omega),
        DVector::from_element(1, eta),
        tau,
    )
    .unwrap()
}

#[test]
fn cdf1_matches_integrated_pdf() {
    for (xi, om, eta, tau) in [
        (0.0, 1.0, 2.0, 0.0),
        (1.0, 2.5, -1.5, -1.0),
        (-2.0, 0.5, 4.0, 1.5),
        (0.0, 1.0, 3.0, -3.0),
    ] {
        let p = scalar(xi, om, eta, tau);
        for y in [-2.0, -0.5, 0.3, 1.7, 3.0] {
            let lo = xi - 15.0 * om.sqrt() * (1.0 + eta.abs());
            let num = integrate(
                |t| p.pdf(&DVector::from_element(1, t)).unwrap(),
                lo,
                y,
                400,
                10,
            );
            let cdf = p.cdf1(y).unwrap();
            assert!(
                (num - cdf).abs() < 1e-8,
                "({xi},{om},{eta},{tau}) y={y}: {num} vs {cdf}"
            );
        }
    }
}

#[test]
fn mean_and_variance_match_quadrature() {
    for (xi, om, eta, tau) in [
        (0.0, 1.0, 2.0, 0.0),
        (1.0, 2.5, -1.5, -1.0),
        (0.5, 0.7, 1.0, 3.0),
    ] {
        let p = scalar(xi, om, eta, tau);
        let f = |t: f64| p.pdf(&DVector::from_element(1, t)).unwrap();
        let (a, b) = (xi - 30.0, xi + 30.0);
        let m = integrate(|t| t * f(t), a, b, 600, 10);
        let v = integrate(|t| (t - m).powi(2) * f(t), a, b, 600, 10);
        let (mean, var) = p.mean_var();
        assert!((mean[0] - m).abs() < 1e-9, "{} vs {m}", mean[0]);
        assert!((var[(0, 0)] - v).abs() < 1e-9, "{} vs {v}", var[(0, 0)]);
    }
}

#[test]
fn skew_normal_density_at_tau_zero() {
    let mut rng = Lcg(3);
    for _ in 0..20 {
        let omega = random_spd(&mut rng, 2);
        let xi = random_vec(&mut rng, 2, -1.0, 1.0);
        let eta = random_vec(&mut rng, 2, -2.0, 2.0);
        let p = EsnParams::from_centered(xi.clone(), omega.clone(), eta.clone(), 0.0).unwrap();
        let y = random_vec(&mut rng, 2, -2.0, 2.0);
        let r = &y - &xi;
        let q = (r.transpose() * omega.clone().try_inverse().unwrap() * &r)[(0, 0)];
        let normal = (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * omega.determinant().sqrt());
        let sn = 2.0 * normal * big_phi(eta.dot(&r));
        let got = p.pdf(&y).unwrap();
        assert!((got - sn).abs() <= 1e-12 * sn.max(1e-300), "{got} vs {sn}");
    }
}

#[test]
fn both_parametrizations_agree() {
    let mut rng = Lcg(9);
    for _ in 0..20 {
        let d = 1 + rng.index(3);
        let omega = random_spd(&mut rng, d);
        let eta = random_vec(&mut rng, d, -1.5, 1.5);
        let xi = random_vec(&mut rng, d, -1.0, 1.0);
        let a = EsnParams::from_centered(xi.clone(), omega.clone(), eta.clone(), 0.7).unwrap();
        let b = EsnParams::from_delta(xi, a.sigma().clone(), a.delta().clone(), 0.7).unwrap();
        assert!((b.omega() - &omega).amax() < 1e-12);
        assert!((b.eta() - &eta).amax() < 1e-12);
        assert!((b.tau_bar() - a.tau_bar()).abs() < 1e-12);
    }
}

/// Latent posterior by quadrature over u:
/// p(u | y) ∝ φ_d(y; ξ + δu, Σ) φ(u) on u > −τ.
#[test]
fn conditional_latent_moments_match_bayes_quadrature() {
    let mut rng = Lcg(21);
    for _ in 0..10 {
        let omega = random_spd(&mut rng, 2);
        let eta = random_vec(&mut rng, 2, -2.0, 2.0);
        let tau = rng.uniform(-1.5, 2.0);
        let p = EsnParams::from_centered(DVector::zeros(2), omega, eta, tau).unwrap();
        let y = random_vec(&mut rng, 2, -2.0, 2.0);
        let sinv = p.sigma().clone().try_inverse().unwrap();
        let like = |u: f64| {
            let r = &y - p.delta() * u;
            (-0.5 * (r.transpose() * &sinv * &r)[(0, 0)]).exp() * phi(u)
        };
        let (lo, hi) = (-tau, 40.0);
        let z = integrate(like, lo, hi, 800, 10);
        let m1 = integrate(|u| u * like(u), lo, hi, 800, 10) / z;
        let m2 = integrate(|u| u * u * like(u), lo, hi, 800, 10) / z;
        let (e1, e2) = trunc_norm_moments(&p.conditional_u(&y).unwrap());
        assert!((e1 - m1).abs() < 1e-9 * m1.abs().max(1.0), "{e1} vs {m1}");
        assert!((e2 - m2).abs() < 1e-9 * m2.abs().max(1.0), "{e2} vs {m2}");
    }
}

#[test]
fn sample_moments_match_closed_form() {
    let omega = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 1.0]);
    for tau in [-2.0, 0.0, 1.0, -8.0] {
        let p = EsnParams::from_centered(
            DVector::from_vec(vec![1.0, -1.0]),
            omega.clone(),
            DVector::from_vec(vec![2.0, -1.0]),
            tau,
        )
        .unwrap();
        let n = 200_000;
        let s = p.sample(&mut rng_stream(99, 0), n);
        let (mean, var) = p.mean_var();
        for j in 0..2 {
            let col = s.column(j);
            let m = col.mean();
            let se = (var[(j, j)] / n as f64).sqrt();
            assert!(
                (m - mean[j]).abs() < 4.0 * se,
                "tau={tau} j={j}: {m} vs {}",
                mean[j]
            );
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            assert!(
                (v / var[(j, j)] - 1.0).abs() < 0.02,
                "tau={tau} var {v} vs {}",
                var[(j, j)]
            );
        }
    }
}

#[test]
fn bivariate_density_integrates_to_one() {
    let p = EsnParams::from_centered(
        DVector::from_vec(vec![0.5, -0.5]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.6]),
        DVector::from_vec(vec![1.5, -2.0]),
        -1.0,
    )
    .unwrap();
    let total = integrate2(
        |a, b| p.pdf(&DVector::from_vec(vec![a, b])).unwrap(),
        (-9.0, 10.0),
        (-10.0, 9.0),
        60,
        10,
    );
    assert!((total - 1.0).abs() < 1e-8, "{total}");
}

#[test]
fn student_t_ese_integrates_and_tends_to_normal() {
    let omega = DMatrix::from_element(1, 1, 1.3);
    let t = EseParams::new(
        DVector::from_element(1, 0.2),
        omega.clone(),
        DVector::from_element(1, 1.4),
        0.5,
        DensityGenerator::student_t(4.0).unwrap(),
    )
    .unwrap();
    let total = integrate(
        |x| t.log_pdf(&DVector::from_element(1, x)).unwrap().exp(),
        -3000.0,
        3000.0,
        6000,
        10,
    );
    assert!((total - 1.0).abs() < 1e-7, "{total}");

    let big = EseParams::new(
        DVector::from_element(1, 0.2),
        omega.clone(),
        DVector::from_element(1, 1.4),
        0.5,
        DensityGenerator::student_t(1e7).unwrap(),
    )
    .unwrap();
    let normal = scalar(0.2, 1.3, 1.4, 0.5);
    for y in [-1.0, 0.0, 2.0] {
        let yv = DVector::from_element(1, y);
        let (a, b) = (big.log_pdf(&yv).unwrap(), normal.log_pdf(&yv).unwrap());
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}
